#pragma once

// Outer optimization over (w, Q): the convex path retrains exactly and uses
// implicit hypergradients, the non-convex path unrolls gradient descent and
// differentiates in reverse mode.

#include <vector>

#include "pgs/core.hpp"
#include "pgs/hypergrad.hpp"
#include "pgs/lower_solver.hpp"

namespace pgs {

// Final per-member gap above which a run is flagged unsafe.
inline constexpr double kSafetySlack = 1e-3;

// Adam over a flat vector.
class Adam {
 public:
  Adam(Eigen::Index size, AdamSettings settings);
  void step(Vector& x, const Vector& grad);
  int steps() const { return t_; }

 private:
  AdamSettings s_;
  Vector m_, v_;
  int t_ = 0;
};

// Raw-label training weights: identity_params, except that unlabeled
// instances get w = 0 in semi-supervised mode (their labels are unknown).
LabelQualityParams baseline_params(const WeakDataset& d, WslMode mode);

// Labeled instances frozen at w = 1 with one-hot Q; unlabeled instances
// start from w = 0.5 and uniform Q (zero shift for regression).
LabelQualityParams ssl_freeze(const WeakDataset& d, const LabelQualityParams& p);

// Starting point of the outer loop for a mode.
LabelQualityParams initial_params(const WeakDataset& d, WslMode mode);

struct BaselineResult {
  ModelParams theta0;
  ValidationEnsemble ensemble;  // with baseline_losses = c_i
};

// Trains on the raw labels with the same solver the chosen path uses and
// records c_i = validation loss of that model on member i.
BaselineResult compute_baseline(const ModelSpec& spec, const WeakDataset& d,
                                const ValidationEnsemble& ensemble, const PgsConfig& config,
                                InnerSolve inner, WslMode mode = WslMode::LabelNoise);

RunReport pgs_convex(const ModelSpec& spec, const WeakDataset& d,
                     const ValidationEnsemble& ensemble, const PgsConfig& config,
                     const FeasibleRegion& region, WslMode mode = WslMode::LabelNoise);

RunReport pgs_nonconvex(const ModelSpec& spec, const WeakDataset& d,
                        const ValidationEnsemble& ensemble, const PgsConfig& config,
                        const FeasibleRegion& region, WslMode mode = WslMode::LabelNoise);

struct Correction {
  int index = 0;
  int proposed = 0;        // argmax_j Q_ij, smallest index on ties
  bool corrected = false;  // proposed != observed label
  bool distrusted = false; // w_i < threshold
};

std::vector<Correction> extract_corrections(const LabelQualityParams& p, const WeakDataset& d,
                                            double w_threshold = 0.5);

}  // namespace pgs
