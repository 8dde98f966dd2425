#pragma once

// Gradients of the upper objective with respect to (w, Q) through the
// lower-level solution map.

#include <vector>

#include "pgs/core.hpp"
#include "pgs/lower_solver.hpp"

namespace pgs {

enum class HyperGradPath { Implicit, Reverse, FiniteDiff };

std::string to_string(HyperGradPath p);

struct HyperGrad {
  Vector d_w;
  Matrix d_q;
  HyperGradPath path = HyperGradPath::Implicit;
};

// Upper objective F(theta) = mean_i V_i(theta) + lambda * S(theta), where V_i
// is the mean clean loss on bootstrap member i and S the safeness term:
//   Literal: max_i (V_i - c_i)      Hinge: max(0, max_i (V_i - c_i)).
struct UpperObjective {
  double value = 0.0;
  double mean_loss = 0.0;
  double safeness = 0.0;
  Vector member_losses;
  Vector gaps;  // V_i - c_i
};

UpperObjective upper_objective(const ModelSpec& spec, const Vector& theta,
                               const ValidationEnsemble& ensemble, const PgsConfig& config);

// dF/dtheta. At ties of the max the tied members' gradients are averaged; an
// inactive hinge contributes nothing.
Vector upper_grad_theta(const ModelSpec& spec, const Vector& theta,
                        const ValidationEnsemble& ensemble, const PgsConfig& config);

// Implicit-function path: solve H u = dF/dtheta by CG over Hessian-vector
// products, then d_w = -u^T d2L/dtheta dw^T and d_Q = -u^T d2L/dtheta dQ^T.
HyperGrad hypergrad_implicit(const ModelSpec& spec, const Vector& theta_star, const WeakDataset& d,
                             const LabelQualityParams& p, const ValidationEnsemble& ensemble,
                             const PgsConfig& config);

// Adjoints recorded by the reverse sweep: alphas[t] is alpha_t, t = 0..T.
struct ReverseTape {
  std::vector<Vector> alphas;
};

// Reverse-mode differentiation through the recorded gradient-descent tape.
// With A_t = I - eta * H(theta_{t-1}), B_t = -eta * d2L/dtheta dw^T at
// theta_{t-1} (likewise C_t for Q):
//   alpha_T = dF/dtheta(theta_T)
//   for t = T..1:  g_w += alpha_t B_t;  g_Q += alpha_t C_t;  alpha_{t-1} = alpha_t A_t
HyperGrad hypergrad_reverse(const ModelSpec& spec, const UnrollTape& tape, const WeakDataset& d,
                            const LabelQualityParams& p, const ValidationEnsemble& ensemble,
                            const PgsConfig& config, ReverseTape* record = nullptr);

enum class InnerSolve { Convex, Unrolled };

// How the full pipeline (w, Q) -> theta -> F is evaluated.
struct PipelineOptions {
  InnerSolve inner = InnerSolve::Convex;
  ConvexSolveOptions convex;
  ModelParams theta0;  // unrolled only
  double eta = 0.1;
  int steps = 500;
};

double pipeline_value(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                      const ValidationEnsemble& ensemble, const PgsConfig& config,
                      const PipelineOptions& pipeline);

struct FdOptions {
  double step = 1e-5;
  int max_coordinates = 400;
};

// Central differences of pipeline_value in every free coordinate of w and Q,
// retraining for each perturbation. Frozen coordinates get exactly zero.
HyperGrad hypergrad_fd(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                       const ValidationEnsemble& ensemble, const PgsConfig& config,
                       const PipelineOptions& pipeline, const FdOptions& fd = {});

// |a - b|_inf / max(|a|_inf, |b|_inf) over the stacked (d_w, d_Q).
double relative_error(const HyperGrad& a, const HyperGrad& b);

}  // namespace pgs
