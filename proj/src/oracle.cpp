#include "pgs/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "pgs/projection.hpp"

namespace pgs::oracle {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

IndexList free_indices(const Mask& frozen, Eigen::Index n) {
  IndexList out;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (frozen.empty() || !frozen[i]) out.push_back(static_cast<int>(i));
  }
  return out;
}

}  // namespace

Vector project_w(const Vector& w, double eps1, const Mask& frozen) {
  const IndexList idx = free_indices(frozen, w.size());
  const int m = static_cast<int>(idx.size());
  if (m > 12) throw Error("oracle::project_w: too many free coordinates");
  double fixed = 0.0;
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    if (!frozen.empty() && frozen[i]) fixed += w(i);
  }
  const double need = eps1 - fixed;  // floor on the free block
  Vector best = w;
  double best_dist = kInf;
  int states = 1;
  for (int i = 0; i < m; ++i) states *= 3;
  for (int floor_active = 0; floor_active < 2; ++floor_active) {
    for (int s = 0; s < states; ++s) {
      // state per coordinate: 0 -> at 0, 1 -> at 1, 2 -> interior
      Vector x = w;
      int code = s;
      int interior = 0;
      double pinned = 0.0;
      double interior_sum = 0.0;
      std::vector<int> state(m);
      for (int t = 0; t < m; ++t) {
        state[t] = code % 3;
        code /= 3;
        if (state[t] == 2) {
          ++interior;
          interior_sum += w(idx[t]);
        } else {
          pinned += state[t];
        }
      }
      double mu = 0.0;
      if (floor_active) {
        if (interior == 0) {
          if (std::abs(pinned - need) > 1e-12) continue;
        } else {
          mu = (need - pinned - interior_sum) / interior;
        }
        if (mu < -1e-12) continue;
      }
      bool ok = true;
      for (int t = 0; t < m && ok; ++t) {
        const int i = idx[t];
        if (state[t] == 2) {
          x(i) = w(i) + mu;
          ok = x(i) >= -1e-12 && x(i) <= 1.0 + 1e-12;
        } else {
          x(i) = state[t];
          // Dual feasibility of the box multiplier.
          const double grad = x(i) - w(i) - mu;
          ok = state[t] == 0 ? grad >= -1e-12 : grad <= 1e-12;
        }
      }
      if (!ok) continue;
      double total = fixed;
      for (int t = 0; t < m; ++t) total += x(idx[t]);
      if (total < eps1 - 1e-9) continue;
      const double dist = (x - w).squaredNorm();
      if (dist < best_dist) {
        best_dist = dist;
        best = x;
      }
    }
  }
  if (best_dist == kInf) throw Error("oracle::project_w: infeasible");
  return best;
}

RowVector project_simplex(const RowVector& v) {
  const int k = static_cast<int>(v.size());
  if (k > 16) throw Error("oracle::project_simplex: too many coordinates");
  RowVector best = RowVector::Zero(k);
  double best_dist = kInf;
  for (int mask = 1; mask < (1 << k); ++mask) {
    double sum = 0.0;
    int size = 0;
    for (int j = 0; j < k; ++j) {
      if (mask & (1 << j)) {
        sum += v(j);
        ++size;
      }
    }
    const double shift = (sum - 1.0) / size;
    RowVector x = RowVector::Zero(k);
    bool ok = true;
    for (int j = 0; j < k && ok; ++j) {
      if (mask & (1 << j)) {
        x(j) = v(j) - shift;
        ok = x(j) >= 0.0;
      }
    }
    if (!ok) continue;
    const double dist = (x - v).squaredNorm();
    if (dist < best_dist) {
      best_dist = dist;
      best = x;
    }
  }
  return best;
}

Vector project_ball(const Vector& q, double eps2, const Mask& frozen, const Mask& capped) {
  IndexList idx;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const bool is_frozen = !frozen.empty() && frozen[i];
    const bool is_capped = capped.empty() ? !is_frozen : capped[i];
    if (is_capped) idx.push_back(static_cast<int>(i));
  }
  const int m = static_cast<int>(idx.size());
  if (m > 3) throw Error("oracle::project_ball: at most 3 capped coordinates");
  Vector sub(m);
  for (int t = 0; t < m; ++t) sub(t) = q(idx[t]);
  if (m == 0 || sub.norm() <= eps2) return q;

  auto point = [&](double a, double b) {
    Vector x(m);
    if (m == 1) {
      x(0) = a < 0.5 ? -eps2 : eps2;
    } else if (m == 2) {
      x << eps2 * std::cos(a), eps2 * std::sin(a);
    } else {
      x << eps2 * std::sin(a) * std::cos(b), eps2 * std::sin(a) * std::sin(b), eps2 * std::cos(a);
    }
    return x;
  };
  auto dist = [&](double a, double b) { return (point(a, b) - sub).squaredNorm(); };

  double best_a = 0.0;
  double best_b = 0.0;
  double best = kInf;
  if (m == 1) {
    best_a = dist(0.0, 0.0) <= dist(1.0, 0.0) ? 0.0 : 1.0;
  } else {
    const int na = m == 2 ? 3600 : 360;
    const int nb = m == 2 ? 1 : 720;
    const double range_a = m == 2 ? 2.0 * M_PI : M_PI;
    for (int i = 0; i <= na; ++i) {
      for (int j = 0; j < nb; ++j) {
        const double a = range_a * i / na;
        const double b = 2.0 * M_PI * j / nb;
        const double d = dist(a, b);
        if (d < best) {
          best = d;
          best_a = a;
          best_b = b;
        }
      }
    }
    // Pattern search around the best grid point.
    double step = range_a / na;
    while (step > 1e-12) {
      bool moved = false;
      for (int da = -1; da <= 1; ++da) {
        for (int db = -1; db <= 1; ++db) {
          if (m == 2 && db != 0) continue;
          const double a = best_a + da * step;
          const double b = best_b + db * step;
          const double d = dist(a, b);
          if (d < best) {
            best = d;
            best_a = a;
            best_b = b;
            moved = true;
          }
        }
      }
      if (!moved) step *= 0.5;
    }
  }
  const Vector x = point(best_a, best_b);
  Vector out = q;
  for (int t = 0; t < m; ++t) out(idx[t]) = x(t);
  return out;
}

Matrix project_q_classification(const Matrix& q, const std::vector<int>& labels, double eps2,
                                const Mask& frozen, const Mask& capped_in) {
  const Eigen::Index n = q.rows();
  Mask capped = capped_in;
  if (capped.empty()) {
    capped.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) capped[i] = frozen.empty() || !frozen[i];
  }
  int count = 0;
  for (Eigen::Index i = 0; i < n; ++i) count += capped[i] ? 1 : 0;

  auto solve = [&](double nu) {
    Matrix x = q;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!frozen.empty() && frozen[i]) continue;
      RowVector v = q.row(i);
      if (capped[i]) v(labels[i]) += nu;
      x.row(i) = project_simplex(v);
    }
    return x;
  };
  auto distance = [&](const Matrix& x) {
    if (count == 0) return 0.0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      if (capped[i]) s += 1.0 - x(i, labels[i]);
    }
    return s / count;
  };

  Matrix x = solve(0.0);
  if (distance(x) <= eps2) return x;
  // The mean distance is nonincreasing in nu and reaches 0 once nu exceeds
  // the spread of every row.
  double lo = 0.0;
  double hi = 1.0;
  while (distance(solve(hi)) > eps2) hi *= 2.0;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    if (distance(solve(mid)) > eps2) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return solve(hi);
}

ProjectCheckStats project_check(int cases, std::uint64_t seed, double ratio_tolerance) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  ProjectCheckStats st;
  st.ratio_tolerance = ratio_tolerance;
  double ratio_sum = 0.0;
  for (int c = 0; c < cases; ++c) {
    const int n = 1 + static_cast<int>(rng() % 3);
    const int k = 2 + static_cast<int>(rng() % 2);
    Mask frozen(n);
    for (int i = 0; i < n; ++i) frozen[i] = unit(rng) < 0.2;

    // w
    Vector w(n);
    for (int i = 0; i < n; ++i) w(i) = frozen[i] ? 1.0 : -1.0 + 3.0 * unit(rng);
    const double eps1 = n * unit(rng);
    const Vector pw = pgs::project_w(w, eps1, frozen);
    const Vector ow = oracle::project_w(w, eps1, frozen);
    st.max_gap_w = std::max(st.max_gap_w, std::abs((pw - w).norm() - (ow - w).norm()));
    double l1 = 0.0;
    for (int i = 0; i < n; ++i) {
      st.max_infeasibility = std::max({st.max_infeasibility, -pw(i), pw(i) - 1.0});
      l1 += pw(i);
    }
    st.max_infeasibility = std::max(st.max_infeasibility, eps1 - l1);

    // regression ball
    Vector qr(n);
    for (int i = 0; i < n; ++i) qr(i) = 2.0 * normal(rng);
    const double eps2r = 3.0 * unit(rng);
    const Vector pr = pgs::project_q_regression(qr, eps2r, frozen);
    const Vector orr = oracle::project_ball(qr, eps2r, frozen);
    st.max_gap_ball = std::max(st.max_gap_ball, std::abs((pr - qr).norm() - (orr - qr).norm()));
    double ball = 0.0;
    for (int i = 0; i < n; ++i) {
      if (!frozen[i]) ball += pr(i) * pr(i);
    }
    st.max_infeasibility = std::max(st.max_infeasibility, std::sqrt(ball) - eps2r);

    // classification
    Matrix qc(n, k);
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      labels[i] = static_cast<int>(rng() % k);
      if (frozen[i]) {
        qc.row(i).setZero();
        qc(i, labels[i]) = 1.0;
      } else {
        for (int j = 0; j < k; ++j) qc(i, j) = -0.5 + 2.0 * unit(rng);
      }
    }
    const double eps2c = unit(rng);
    const Matrix pc = pgs::project_q_classification(qc, labels, eps2c, frozen);
    const Matrix oc = oracle::project_q_classification(qc, labels, eps2c, frozen);
    double dist_sum = 0.0;
    int capped = 0;
    for (int i = 0; i < n; ++i) {
      st.max_infeasibility = std::max(st.max_infeasibility, std::abs(pc.row(i).sum() - 1.0));
      st.max_infeasibility = std::max(st.max_infeasibility, -pc.row(i).minCoeff());
      if (!frozen[i]) {
        dist_sum += 1.0 - pc(i, labels[i]);
        ++capped;
      }
    }
    if (capped > 0) st.max_infeasibility = std::max(st.max_infeasibility, dist_sum / capped - eps2c);
    const double ours = (pc - qc).norm();
    const double best = (oc - qc).norm();
    const double ratio = best > 1e-12 ? ours / best : (ours <= 1e-9 ? 1.0 : kInf);
    ratio_sum += ratio;
    st.worst_ratio = std::max(st.worst_ratio, ratio);
    if (ratio <= 1.0 + ratio_tolerance) ++st.classification_within;
    ++st.cases;
  }
  st.mean_ratio = cases > 0 ? ratio_sum / cases : 1.0;
  return st;
}

}  // namespace pgs::oracle
