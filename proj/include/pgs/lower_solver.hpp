#pragma once

// Lower-level problem: theta = argmin L_train(theta, w, Q).

#include <vector>

#include "pgs/core.hpp"

namespace pgs {

struct ConvexSolveOptions {
  // Stopping tolerance on |grad_theta|_inf; 0 picks the family default
  // (1e-8 linear, 1e-6 softmax).
  double tol = 0.0;
  int max_newton_iters = 200;
  CgSettings cg;
};

// Recorded gradient-descent trajectory theta_0 ... theta_T.
struct UnrollTape {
  std::vector<Vector> theta_trajectory;
  double eta = 0.0;
  int steps = 0;
};

struct UnrollResult {
  ModelParams params;
  UnrollTape tape;
};

// Exact minimizer for the convex families: a direct normal-equation solve for
// linear regression, damped Newton-CG for softmax regression.
ModelParams train_convex(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                         const ConvexSolveOptions& opts = {});

// T steps of full-batch gradient descent from theta0, keeping every iterate.
UnrollResult train_unrolled(const ModelSpec& spec, const WeakDataset& d,
                            const LabelQualityParams& p, const ModelParams& theta0, double eta,
                            int steps);

// |grad_theta L_train|_inf.
double kkt_residual(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                    const LabelQualityParams& p);

// Upper bound on the curvature of L_train for the convex families; gradient
// descent with eta < 2 / bound is stable.
double lipschitz_bound(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p);

// Starting point of the unrolled dynamics: zeros for the convex families, a
// seeded small random draw for the MLP (all-zero weights are a saddle).
ModelParams initial_theta(const ModelSpec& spec, std::uint64_t seed);

}  // namespace pgs
