#include "pgs/pgs.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

#include "pgs/model.hpp"
#include "pgs/projection.hpp"

namespace pgs {

Adam::Adam(Eigen::Index size, AdamSettings settings)
    : s_(settings), m_(Vector::Zero(size)), v_(Vector::Zero(size)) {}

void Adam::step(Vector& x, const Vector& grad) {
  ++t_;
  m_ = s_.beta1 * m_ + (1.0 - s_.beta1) * grad;
  v_ = s_.beta2 * v_ + (1.0 - s_.beta2) * grad.cwiseAbs2();
  const double c1 = 1.0 - std::pow(s_.beta1, t_);
  const double c2 = 1.0 - std::pow(s_.beta2, t_);
  x.array() -= s_.lr * (m_.array() / c1) / ((v_.array() / c2).sqrt() + s_.epsilon);
}

LabelQualityParams baseline_params(const WeakDataset& d, WslMode mode) {
  LabelQualityParams p = identity_params(d, WslMode::LabelNoise);
  if (mode == WslMode::SemiSupervised) {
    for (int i = 0; i < d.size(); ++i) {
      if (!d.labeled_mask()[i]) p.w(i) = 0.0;
    }
  }
  return p;
}

LabelQualityParams ssl_freeze(const WeakDataset& d, const LabelQualityParams& p) {
  LabelQualityParams out = p;
  const int n = d.size();
  const int width = d.task().q_width();
  out.frozen.assign(n, false);
  for (int i = 0; i < n; ++i) {
    if (d.labeled_mask()[i]) {
      out.frozen[i] = true;
      out.w(i) = 1.0;
      out.q.row(i).setZero();
      if (d.task().is_classification()) out.q(i, d.classes()[i]) = 1.0;
    } else {
      out.w(i) = 0.5;
      out.q.row(i).setConstant(d.task().is_classification() ? 1.0 / width : 0.0);
    }
  }
  return out;
}

LabelQualityParams initial_params(const WeakDataset& d, WslMode mode) {
  LabelQualityParams p = identity_params(d, mode);
  if (mode == WslMode::SemiSupervised) p = ssl_freeze(d, p);
  return p;
}

namespace {

ConvexSolveOptions convex_options(const PgsConfig& config) {
  ConvexSolveOptions o;
  o.tol = config.inner_tol;
  o.cg = config.cg;
  return o;
}

ModelParams solve_inner(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                        const PgsConfig& config, InnerSolve inner, const ModelParams& theta0) {
  if (inner == InnerSolve::Convex) return train_convex(spec, d, p, convex_options(config));
  return train_unrolled(spec, d, p, theta0, config.lower_step, config.lower_iters).params;
}

// Free coordinates of (w, Q) as one flat vector, and back.
Vector pack_free(const Vector& w, const Matrix& q, const Mask& frozen) {
  const int width = static_cast<int>(q.cols());
  Vector out(static_cast<Eigen::Index>(std::count(frozen.begin(), frozen.end(), false)) *
             (1 + width));
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (frozen[i]) continue;
    out(k++) = w(i);
    for (int j = 0; j < width; ++j) out(k++) = q(i, j);
  }
  return out;
}

void unpack_free(const Vector& flat, Vector& w, Matrix& q, const Mask& frozen) {
  const int width = static_cast<int>(q.cols());
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (frozen[i]) continue;
    w(i) = flat(k++);
    for (int j = 0; j < width; ++j) q(i, j) = flat(k++);
  }
}

struct LoopSetup {
  InnerSolve inner;
  std::string method;
};

RunReport run_outer_loop(const ModelSpec& spec, const WeakDataset& d,
                         const ValidationEnsemble& ensemble_in, const PgsConfig& config,
                         const FeasibleRegion& region, WslMode mode, const LoopSetup& setup) {
  const auto started = std::chrono::steady_clock::now();
  check_compatible(spec, d);
  validate_config(config);
  validate_region(region, d.task(), d.size());
  validate_ensemble(ensemble_in);

  const ModelParams theta0 = initial_theta(spec, config.seed);
  ValidationEnsemble ensemble = ensemble_in;
  Vector before;
  {
    const BaselineResult base = compute_baseline(spec, d, ensemble_in, config, setup.inner, mode);
    if (!ensemble.has_baseline()) ensemble = base.ensemble;
    before = base.ensemble.baseline_losses;
  }

  LabelQualityParams state = initial_params(d, mode);
  state = project(state, d, region);
  Adam adam(pack_free(state.w, state.q, state.frozen).size(), config.upper);

  RunReport report;
  report.method = setup.method;
  report.seed = config.seed;
  report.baseline_losses = ensemble.baseline_losses;
  report.val_losses_before = before;

  for (int l = 1; l <= config.upper_iters; ++l) {
    HyperGrad hg;
    Vector theta;
    if (setup.inner == InnerSolve::Convex) {
      theta = train_convex(spec, d, state, convex_options(config)).theta;
      hg = hypergrad_implicit(spec, theta, d, state, ensemble, config);
    } else {
      UnrollResult unrolled =
          train_unrolled(spec, d, state, theta0, config.lower_step, config.lower_iters);
      if (static_cast<int>(unrolled.tape.theta_trajectory.size()) != config.lower_iters + 1) {
        throw Error("pgs_nonconvex: tape length mismatch");
      }
      theta = unrolled.params.theta;
      hg = hypergrad_reverse(spec, unrolled.tape, d, state, ensemble, config);
    }
    const UpperObjective obj = upper_objective(spec, theta, ensemble, config);
    if (!std::isfinite(obj.value) || !hg.d_w.allFinite() || !hg.d_q.allFinite()) {
      std::ostringstream os;
      os << report.method << ": non-finite objective or hypergradient at outer iteration " << l
         << " (objective " << obj.value << ")";
      throw Error(os.str());
    }
    report.objective_trace.push_back(obj.value);

    Vector flat = pack_free(state.w, state.q, state.frozen);
    adam.step(flat, pack_free(hg.d_w, hg.d_q, state.frozen));
    unpack_free(flat, state.w, state.q, state.frozen);
    state = project(state, d, region);
    if (!is_feasible(state, d, region)) {
      throw Error(report.method + ": projection left (w, Q) infeasible at iteration " +
                  std::to_string(l));
    }
  }

  report.theta = solve_inner(spec, d, state, config, setup.inner, theta0);
  const UpperObjective final_obj = upper_objective(spec, report.theta.theta, ensemble, config);
  report.objective_trace.push_back(final_obj.value);
  report.params = state;
  report.val_losses_after = final_obj.member_losses;
  report.gaps_after = final_obj.gaps;
  report.unsafe = final_obj.gaps.maxCoeff() > kSafetySlack;
  report.diagnostics["hvp_mode"] = "analytic";
  report.diagnostics["inner_solver"] = setup.inner == InnerSolve::Convex ? "convex" : "unrolled";
  report.diagnostics["hypergradient"] =
      setup.inner == InnerSolve::Convex ? "implicit" : "reverse";
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

}  // namespace

BaselineResult compute_baseline(const ModelSpec& spec, const WeakDataset& d,
                                const ValidationEnsemble& ensemble, const PgsConfig& config,
                                InnerSolve inner, WslMode mode) {
  check_compatible(spec, d);
  validate_ensemble(ensemble);
  BaselineResult out;
  out.theta0 = solve_inner(spec, d, baseline_params(d, mode), config, inner,
                           initial_theta(spec, config.seed));
  out.ensemble = ensemble;
  out.ensemble.baseline_losses.resize(ensemble.members());
  for (int i = 0; i < ensemble.members(); ++i) {
    out.ensemble.baseline_losses(i) = validation_loss(spec, out.theta0.theta, ensemble.base_set,
                                                      ensemble.member_indices[i]);
  }
  return out;
}

RunReport pgs_convex(const ModelSpec& spec, const WeakDataset& d,
                     const ValidationEnsemble& ensemble, const PgsConfig& config,
                     const FeasibleRegion& region, WslMode mode) {
  if (!spec.is_convex()) throw Error("pgs_convex needs a convex model family");
  return run_outer_loop(spec, d, ensemble, config, region, mode, {InnerSolve::Convex, "pgs_convex"});
}

RunReport pgs_nonconvex(const ModelSpec& spec, const WeakDataset& d,
                        const ValidationEnsemble& ensemble, const PgsConfig& config,
                        const FeasibleRegion& region, WslMode mode) {
  return run_outer_loop(spec, d, ensemble, config, region, mode,
                        {InnerSolve::Unrolled, "pgs_nonconvex"});
}

std::vector<Correction> extract_corrections(const LabelQualityParams& p, const WeakDataset& d,
                                            double w_threshold) {
  if (!d.task().is_classification()) throw Error("extract_corrections needs a classification task");
  std::vector<Correction> out;
  out.reserve(d.size());
  for (int i = 0; i < d.size(); ++i) {
    Correction c;
    c.index = i;
    Eigen::Index best = 0;
    p.q.row(i).maxCoeff(&best);  // first maximal index
    c.proposed = static_cast<int>(best);
    c.corrected = c.proposed != d.classes()[i];
    c.distrusted = p.w(i) < w_threshold;
    out.push_back(c);
  }
  return out;
}

}  // namespace pgs
