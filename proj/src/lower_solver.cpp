#include "pgs/lower_solver.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "pgs/cg.hpp"
#include "pgs/model.hpp"

namespace pgs {

namespace {

Matrix augmented(const Matrix& x) {
  Matrix a(x.rows(), x.cols() + 1);
  a << x, Vector::Ones(x.rows());
  return a;
}

ModelParams solve_linear(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                         double tol) {
  const WeightedTargets t = train_targets(d, p);
  const Matrix a = augmented(d.features());
  const Matrix gram = 2.0 * a.transpose() * t.weight.asDiagonal() * a +
                      spec.l2_reg * Matrix::Identity(a.cols(), a.cols());
  const Vector rhs = 2.0 * a.transpose() * (t.weight.asDiagonal() * t.target.col(0));
  Eigen::LLT<Matrix> llt(gram);
  if (llt.info() != Eigen::Success) {
    throw Error("train_convex: normal equations are not positive definite (add l2_reg > 0)");
  }
  // theta layout for a linear head is [W (1 x d), b], which matches [X, 1].
  ModelParams out{llt.solve(rhs)};
  for (int refine = 0; refine < 3; ++refine) {
    const Vector g = grad_theta(spec, out.theta, d, p);
    if (g.lpNorm<Eigen::Infinity>() <= tol) return out;
    out.theta -= llt.solve(g);
  }
  const double res = kkt_residual(spec, out.theta, d, p);
  if (res > tol) {
    std::ostringstream os;
    os << "train_convex: linear solve did not reach tolerance " << tol << ", residual " << res;
    throw Error(os.str());
  }
  return out;
}

ModelParams solve_newton(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                         const ConvexSolveOptions& opts, double tol) {
  const WeightedTargets t = train_targets(d, p);
  const Matrix& x = d.features();
  const double l2 = spec.l2_reg;
  Vector theta = Vector::Zero(spec.param_count());
  double f = objective(spec, theta, x, t, l2);
  const int cg_iters = opts.cg.max_iters > 0 ? opts.cg.max_iters : 2 * spec.param_count() + 10;
  double res = 0.0;
  for (int it = 0; it < opts.max_newton_iters; ++it) {
    const Vector g = objective_grad(spec, theta, x, t, l2);
    res = g.lpNorm<Eigen::Infinity>();
    if (res <= tol) return {theta};
    const LinearOperator hess = [&](const Vector& v) {
      return objective_hvp(spec, theta, x, t, l2, v);
    };
    // Inexact Newton: forcing term shrinks with the gradient.
    const double forcing = std::min(0.1, std::sqrt(g.norm()));
    const CgResult step = conjugate_gradient(hess, -g, forcing, cg_iters);
    const Vector dir = step.x;
    const double slope = g.dot(dir);
    double s = 1.0;
    // Below this the predicted decrease is lost in the rounding of f and the
    // line search would accept arbitrarily short steps; near the optimum the
    // full Newton step is a contraction.
    bool accepted = -slope < 1e-10 * std::max(1.0, std::abs(f));
    if (accepted) {
      theta += dir;
      f = objective(spec, theta, x, t, l2);
    }
    while (!accepted && s > 1e-12) {
      const Vector cand = theta + s * dir;
      const double fc = objective(spec, cand, x, t, l2);
      if (fc <= f + 1e-4 * s * slope) {
        theta = cand;
        f = fc;
        accepted = true;
        break;
      }
      s *= 0.5;
    }
    if (!accepted) {
      theta += dir;
      f = objective(spec, theta, x, t, l2);
    }
  }
  res = kkt_residual(spec, theta, d, p);
  if (res <= tol) return {theta};
  std::ostringstream os;
  os << "train_convex: Newton-CG did not converge after " << opts.max_newton_iters
     << " iterations, residual " << res;
  throw Error(os.str());
}

}  // namespace

ModelParams train_convex(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                         const ConvexSolveOptions& opts) {
  check_compatible(spec, d);
  switch (spec.family) {
    case ModelFamily::LinearRegression:
      return solve_linear(spec, d, p, opts.tol > 0.0 ? opts.tol : 1e-8);
    case ModelFamily::SoftmaxRegression:
      if (!(spec.l2_reg > 0.0)) throw Error("train_convex: softmax regression needs l2_reg > 0");
      return solve_newton(spec, d, p, opts, opts.tol > 0.0 ? opts.tol : 1e-6);
    case ModelFamily::TwoLayerMlp:
      break;
  }
  throw Error("train_convex: the MLP lower problem is not convex; use train_unrolled");
}

UnrollResult train_unrolled(const ModelSpec& spec, const WeakDataset& d,
                            const LabelQualityParams& p, const ModelParams& theta0, double eta,
                            int steps) {
  check_compatible(spec, d);
  if (!(eta > 0.0)) throw Error("train_unrolled: eta must be > 0");
  if (steps < 1) throw Error("train_unrolled: T must be >= 1");
  if (theta0.theta.size() != spec.param_count()) throw Error("train_unrolled: theta0 has wrong size");
  const WeightedTargets t = train_targets(d, p);
  UnrollResult out;
  out.tape.eta = eta;
  out.tape.steps = steps;
  out.tape.theta_trajectory.reserve(steps + 1);
  out.tape.theta_trajectory.push_back(theta0.theta);
  Vector theta = theta0.theta;
  for (int s = 1; s <= steps; ++s) {
    theta -= eta * objective_grad(spec, theta, d.features(), t, spec.l2_reg);
    if (!theta.allFinite()) {
      throw Error("train_unrolled: diverged (non-finite theta) at step " + std::to_string(s));
    }
    out.tape.theta_trajectory.push_back(theta);
  }
  out.params.theta = theta;
  return out;
}

double kkt_residual(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                    const LabelQualityParams& p) {
  return grad_theta(spec, theta, d, p).lpNorm<Eigen::Infinity>();
}

double lipschitz_bound(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p) {
  if (!spec.is_convex()) throw Error("lipschitz_bound is only available for convex families");
  const WeightedTargets t = train_targets(d, p);
  const Matrix a = augmented(d.features());
  Vector scale = t.weight;
  if (spec.family == ModelFamily::SoftmaxRegression) {
    // Softmax Hessian in the logits is bounded by mass/2 * I.
    scale = scale.cwiseProduct(t.target.rowwise().sum().cwiseAbs()) * 0.5;
  } else {
    scale *= 2.0;
  }
  const Matrix gram = a.transpose() * scale.asDiagonal() * a;
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff() + spec.l2_reg;
}

ModelParams initial_theta(const ModelSpec& spec, std::uint64_t seed) {
  ModelParams p{Vector::Zero(spec.param_count())};
  if (spec.family != ModelFamily::TwoLayerMlp) return p;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const int h = spec.hidden_units;
  const int d = spec.input_dim;
  const double s1 = 1.0 / std::sqrt(static_cast<double>(d));
  const double s2 = 1.0 / std::sqrt(static_cast<double>(h));
  int k = 0;
  for (int i = 0; i < h * d; ++i) p.theta(k++) = s1 * normal(rng);
  k += h;  // b1 = 0
  for (int i = 0; i < spec.outputs * h; ++i) p.theta(k++) = s2 * normal(rng);
  return p;
}

}  // namespace pgs
