#include "pgs/projection.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

namespace pgs {

namespace {

// Slack below which a constraint counts as satisfied; keeps the scaling and
// blending paths exactly idempotent.
constexpr double kSlack = 1e-12;

void check_mask(const Mask& frozen, Eigen::Index n) {
  if (static_cast<Eigen::Index>(frozen.size()) != n) {
    throw Error("dimension mismatch: frozen mask length");
  }
}

Mask resolve_capped(const Mask& frozen, const Mask& capped) {
  if (capped.empty()) {
    Mask out(frozen.size());
    for (std::size_t i = 0; i < frozen.size(); ++i) out[i] = !frozen[i];
    return out;
  }
  if (capped.size() != frozen.size()) throw Error("dimension mismatch: capped mask length");
  Mask out = capped;
  for (std::size_t i = 0; i < frozen.size(); ++i) out[i] = out[i] && !frozen[i];
  return out;
}

}  // namespace

Vector project_w(const Vector& w, double eps1, const Mask& frozen) {
  const Eigen::Index n = w.size();
  check_mask(frozen, n);
  if (eps1 > static_cast<double>(n)) throw Error("project_w: infeasible, eps1 exceeds n");
  double frozen_sum = 0.0;
  double min_free = INFINITY;
  Eigen::Index free_count = 0;
  Vector out = w;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (frozen[i]) {
      frozen_sum += w(i);
    } else {
      out(i) = std::clamp(w(i), 0.0, 1.0);
      min_free = std::min(min_free, w(i));
      ++free_count;
    }
  }
  if (frozen_sum + static_cast<double>(free_count) < eps1) {
    throw Error("project_w: infeasible, eps1 cannot be reached with the frozen weights");
  }
  auto mass = [&](double tau) {
    double s = frozen_sum;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!frozen[i]) s += std::clamp(w(i) + tau, 0.0, 1.0);
    }
    return s;
  };
  if (mass(0.0) >= eps1) return out;

  double lo = 0.0;
  double hi = std::max(0.0, 1.0 - min_free);
  for (int it = 0; it < 200 && hi - lo > 0.0; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (mid <= lo || mid >= hi) break;
    if (mass(mid) >= eps1) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!frozen[i]) out(i) = std::clamp(w(i) + hi, 0.0, 1.0);
  }
  return out;
}

RowVector project_simplex(const RowVector& row) {
  const Eigen::Index k = row.size();
  std::vector<double> u(row.data(), row.data() + k);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    cumsum += u[j];
    const double candidate = (cumsum - 1.0) / static_cast<double>(j + 1);
    if (u[j] - candidate > 0.0) tau = candidate;
  }
  return (row.array() - tau).max(0.0).matrix();
}

Matrix project_q_classification(const Matrix& q, const std::vector<int>& labels, double eps2,
                                const Mask& frozen, const Mask& capped_in) {
  check_mask(frozen, q.rows());
  const Mask capped = resolve_capped(frozen, capped_in);
  if (static_cast<Eigen::Index>(labels.size()) != q.rows()) {
    throw Error("dimension mismatch: labels length");
  }
  if (!(eps2 >= 0.0 && eps2 <= 1.0)) throw Error("project_q_classification: eps2 must be in [0,1]");
  Matrix out = q;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if (!frozen[i]) out.row(i) = project_simplex(q.row(i));
  }
  const double dist = mean_label_distance(out, labels, capped);
  if (dist > eps2 + kSlack) {
    const double t = (dist - eps2) / dist;
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
      if (!capped[i]) continue;
      out.row(i) *= (1.0 - t);
      out(i, labels[i]) += t;
    }
  }
  return out;
}

Vector project_q_regression(const Vector& q, double eps2, const Mask& frozen,
                            const Mask& capped_in) {
  check_mask(frozen, q.size());
  const Mask capped = resolve_capped(frozen, capped_in);
  if (!(eps2 >= 0.0)) throw Error("project_q_regression: eps2 must be >= 0");
  double sq = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (capped[i]) sq += q(i) * q(i);
  }
  const double norm = std::sqrt(sq);
  if (norm <= eps2 + kSlack) return q;
  Vector out = q;
  const double scale = eps2 / norm;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    if (capped[i]) out(i) *= scale;
  }
  return out;
}

LabelQualityParams project(const LabelQualityParams& p, const WeakDataset& d,
                           const FeasibleRegion& region) {
  LabelQualityParams out = p;
  out.w = project_w(p.w, region.eps1, p.frozen);
  if (d.task().is_classification()) {
    out.q = project_q_classification(p.q, d.classes(), region.eps2, p.frozen, d.labeled_mask());
  } else {
    out.q.col(0) = project_q_regression(p.q.col(0), region.eps2, p.frozen, d.labeled_mask());
  }
  return out;
}

}  // namespace pgs
