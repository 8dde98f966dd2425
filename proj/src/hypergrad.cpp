#include "pgs/hypergrad.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "pgs/cg.hpp"
#include "pgs/model.hpp"

namespace pgs {

namespace {

constexpr double kTieTolerance = 1e-12;

void zero_frozen(HyperGrad& g, const Mask& frozen) {
  for (std::size_t i = 0; i < frozen.size(); ++i) {
    if (!frozen[i]) continue;
    g.d_w(static_cast<Eigen::Index>(i)) = 0.0;
    g.d_q.row(static_cast<Eigen::Index>(i)).setZero();
  }
}

void require_baseline(const ValidationEnsemble& e) {
  if (!e.has_baseline()) throw Error("validation ensemble baseline losses are not populated");
}

}  // namespace

std::string to_string(HyperGradPath p) {
  switch (p) {
    case HyperGradPath::Implicit: return "implicit";
    case HyperGradPath::Reverse: return "reverse";
    case HyperGradPath::FiniteDiff: return "finite_diff";
  }
  return "?";
}

UpperObjective upper_objective(const ModelSpec& spec, const Vector& theta,
                               const ValidationEnsemble& ensemble, const PgsConfig& config) {
  require_baseline(ensemble);
  const int m = ensemble.members();
  UpperObjective out;
  out.member_losses.resize(m);
  for (int i = 0; i < m; ++i) {
    out.member_losses(i) =
        validation_loss(spec, theta, ensemble.base_set, ensemble.member_indices[i]);
  }
  out.gaps = out.member_losses - ensemble.baseline_losses;
  out.mean_loss = out.member_losses.mean();
  const double worst = out.gaps.maxCoeff();
  out.safeness = config.safeness_mode == SafenessMode::Hinge ? std::max(0.0, worst) : worst;
  out.value = out.mean_loss + config.lambda * out.safeness;
  return out;
}

Vector upper_grad_theta(const ModelSpec& spec, const Vector& theta,
                        const ValidationEnsemble& ensemble, const PgsConfig& config) {
  require_baseline(ensemble);
  const int m = ensemble.members();
  std::vector<Vector> grads;
  grads.reserve(m);
  Vector losses(m);
  Vector mean_grad = Vector::Zero(theta.size());
  for (int i = 0; i < m; ++i) {
    const auto& member = ensemble.member_indices[i];
    losses(i) = validation_loss(spec, theta, ensemble.base_set, member);
    grads.push_back(validation_grad(spec, theta, ensemble.base_set, member));
    mean_grad += grads.back();
  }
  mean_grad /= static_cast<double>(m);
  if (config.lambda == 0.0) return mean_grad;

  const Vector gaps = losses - ensemble.baseline_losses;
  const double worst = gaps.maxCoeff();
  if (config.safeness_mode == SafenessMode::Hinge && !(worst > 0.0)) return mean_grad;

  Vector sub = Vector::Zero(theta.size());
  int tied = 0;
  for (int i = 0; i < m; ++i) {
    if (worst - gaps(i) <= kTieTolerance) {
      sub += grads[i];
      ++tied;
    }
  }
  return mean_grad + config.lambda * sub / static_cast<double>(tied);
}

HyperGrad hypergrad_implicit(const ModelSpec& spec, const Vector& theta_star, const WeakDataset& d,
                             const LabelQualityParams& p, const ValidationEnsemble& ensemble,
                             const PgsConfig& config) {
  const Vector rhs = upper_grad_theta(spec, theta_star, ensemble, config);
  HyperGrad out;
  out.path = HyperGradPath::Implicit;
  if (rhs.isZero(0.0)) {
    out.d_w = Vector::Zero(d.size());
    out.d_q = Matrix::Zero(d.size(), d.task().q_width());
    return out;
  }
  const LinearOperator hess = [&](const Vector& v) { return hvp_theta(spec, theta_star, d, p, v); };
  const int max_iters = config.cg.max_iters > 0 ? config.cg.max_iters : 2 * spec.param_count();
  const CgResult u = conjugate_gradient(hess, rhs, config.cg.tol, max_iters);
  if (!u.converged) {
    std::ostringstream os;
    os << "hypergrad_implicit: CG did not converge in " << u.iterations << " iterations, residual "
       << u.residual;
    throw Error(os.str());
  }
  out.d_w = -mixed_w_vjp(spec, theta_star, d, p, u.x);
  out.d_q = -mixed_q_vjp(spec, theta_star, d, p, u.x);
  zero_frozen(out, p.frozen);
  return out;
}

HyperGrad hypergrad_reverse(const ModelSpec& spec, const UnrollTape& tape, const WeakDataset& d,
                            const LabelQualityParams& p, const ValidationEnsemble& ensemble,
                            const PgsConfig& config, ReverseTape* record) {
  const int steps = tape.steps;
  if (steps < 1 || static_cast<int>(tape.theta_trajectory.size()) != steps + 1) {
    throw Error("hypergrad_reverse: incomplete tape");
  }
  const double eta = tape.eta;
  Vector alpha = upper_grad_theta(spec, tape.theta_trajectory[steps], ensemble, config);
  if (record) {
    record->alphas.assign(steps + 1, Vector());
    record->alphas[steps] = alpha;
  }
  HyperGrad out;
  out.path = HyperGradPath::Reverse;
  out.d_w = Vector::Zero(d.size());
  out.d_q = Matrix::Zero(d.size(), d.task().q_width());
  for (int t = steps; t >= 1; --t) {
    const Vector& prev = tape.theta_trajectory[t - 1];
    out.d_w -= eta * mixed_w_vjp(spec, prev, d, p, alpha);
    out.d_q -= eta * mixed_q_vjp(spec, prev, d, p, alpha);
    alpha -= eta * hvp_theta(spec, prev, d, p, alpha);
    if (!alpha.allFinite()) {
      throw Error("hypergrad_reverse: non-finite adjoint at t = " + std::to_string(t - 1));
    }
    if (record) record->alphas[t - 1] = alpha;
  }
  zero_frozen(out, p.frozen);
  return out;
}

double pipeline_value(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                      const ValidationEnsemble& ensemble, const PgsConfig& config,
                      const PipelineOptions& pipeline) {
  Vector theta;
  if (pipeline.inner == InnerSolve::Convex) {
    theta = train_convex(spec, d, p, pipeline.convex).theta;
  } else {
    theta = train_unrolled(spec, d, p, pipeline.theta0, pipeline.eta, pipeline.steps).params.theta;
  }
  return upper_objective(spec, theta, ensemble, config).value;
}

HyperGrad hypergrad_fd(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                       const ValidationEnsemble& ensemble, const PgsConfig& config,
                       const PipelineOptions& pipeline, const FdOptions& fd) {
  if (!(fd.step > 0.0)) throw Error("hypergrad_fd: step must be > 0");
  const int n = d.size();
  const int width = d.task().q_width();
  const int coords = p.free_count() * (1 + width);
  if (coords > fd.max_coordinates) {
    throw Error("hypergrad_fd: " + std::to_string(coords) + " coordinates exceed the budget of " +
                std::to_string(fd.max_coordinates));
  }
  HyperGrad out;
  out.path = HyperGradPath::FiniteDiff;
  out.d_w = Vector::Zero(n);
  out.d_q = Matrix::Zero(n, width);
  const double h = fd.step;
  LabelQualityParams probe = p;
  auto central = [&](double& slot) {
    const double saved = slot;
    slot = saved + h;
    const double plus = pipeline_value(spec, d, probe, ensemble, config, pipeline);
    slot = saved - h;
    const double minus = pipeline_value(spec, d, probe, ensemble, config, pipeline);
    slot = saved;
    return (plus - minus) / (2.0 * h);
  };
  for (int i = 0; i < n; ++i) {
    if (p.frozen[i]) continue;
    out.d_w(i) = central(probe.w(i));
    for (int j = 0; j < width; ++j) out.d_q(i, j) = central(probe.q(i, j));
  }
  return out;
}

double relative_error(const HyperGrad& a, const HyperGrad& b) {
  if (a.d_w.size() != b.d_w.size() || a.d_q.rows() != b.d_q.rows() ||
      a.d_q.cols() != b.d_q.cols()) {
    throw Error("relative_error: shape mismatch");
  }
  const double diff = std::max((a.d_w - b.d_w).lpNorm<Eigen::Infinity>(),
                               (a.d_q - b.d_q).lpNorm<Eigen::Infinity>());
  const double scale = std::max({a.d_w.lpNorm<Eigen::Infinity>(), a.d_q.lpNorm<Eigen::Infinity>(),
                                 b.d_w.lpNorm<Eigen::Infinity>(), b.d_q.lpNorm<Eigen::Infinity>()});
  if (scale == 0.0) return diff == 0.0 ? 0.0 : INFINITY;
  return diff / scale;
}

}  // namespace pgs
