#pragma once

// Differentiable losses for the supported model families.
//
// Every family is a stack of at most one tanh hidden layer followed by an
// affine output layer. Classification heads use softmax cross-entropy,
// regression heads squared error. All derivatives are hand-derived; the
// Hessian-vector product uses the R-operator (forward-over-reverse) so it is
// exact for every family, including the MLP.
//
// Parameter layout inside theta (column-major blocks):
//   linear / softmax : W (outputs x d), b (outputs)
//   two-layer MLP    : W1 (hidden x d), b1 (hidden), W2 (outputs x hidden), b2 (outputs)

#include "pgs/core.hpp"

namespace pgs {

enum class LossKind { CrossEntropy, SquaredError };

LossKind loss_kind(const ModelSpec& spec);

// Per-instance supervision for the generic objective
//   sum_i weight_i * loss(x_i, target_i) + l2 / 2 * |theta|^2.
// For cross-entropy, target row i is a (not necessarily normalized) class
// distribution and loss = sum_j target_ij * (-log p_j). For squared error,
// target is n x 1 and loss = (f(x_i) - target_i)^2.
struct WeightedTargets {
  Vector weight;
  Matrix target;
};

// Targets of the weighted training loss: weight w_i / n, target Q_i
// (classification) or y_i + Q_i (regression).
WeightedTargets train_targets(const WeakDataset& d, const LabelQualityParams& p);

// Targets of the mean loss over a bootstrap member (multiset semantics).
WeightedTargets member_targets(const WeakDataset& base, const IndexList& member);

// Raw network outputs (logits for classification), n x outputs.
Matrix outputs(const ModelSpec& spec, const Vector& theta, const Matrix& x);

// Class probabilities (classification) or real predictions (regression).
Matrix predict(const ModelSpec& spec, const Vector& theta, const Matrix& x);

// -log p_j(x). Nonnegative.
double per_class_loss(const ModelSpec& spec, const Vector& theta, const RowVector& x, int j);

// n x k matrix of per_class_loss values.
Matrix per_class_losses(const ModelSpec& spec, const Vector& theta, const Matrix& x);

double objective(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                 const WeightedTargets& t, double l2);
Vector objective_grad(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                      const WeightedTargets& t, double l2);
Vector objective_hvp(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                     const WeightedTargets& t, double l2, const Vector& v);

double weighted_train_loss(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                           const LabelQualityParams& p);
Vector grad_theta(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                  const LabelQualityParams& p);
Vector hvp_theta(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                 const LabelQualityParams& p, const Vector& v);

// v^T d^2 L_train / (d theta d w^T): entry i = (1/n) <v, grad_theta of instance i's loss>.
Vector mixed_w_vjp(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                   const LabelQualityParams& p, const Vector& v);

// v^T d^2 L_train / (d theta d Q^T), shaped like Q.
Matrix mixed_q_vjp(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                   const LabelQualityParams& p, const Vector& v);

double validation_loss(const ModelSpec& spec, const Vector& theta, const WeakDataset& base,
                       const IndexList& member);
Vector validation_grad(const ModelSpec& spec, const Vector& theta, const WeakDataset& base,
                       const IndexList& member);

}  // namespace pgs
