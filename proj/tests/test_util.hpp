#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "pgs/core.hpp"

namespace testutil {

using pgs::LabelQualityParams;
using pgs::Matrix;
using pgs::Vector;
using pgs::WeakDataset;
using Rng = std::mt19937_64;

inline Matrix random_matrix(int rows, int cols, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
  return m;
}

inline Vector random_vector(int n, Rng& rng, double scale = 1.0) {
  return random_matrix(n, 1, rng, scale).col(0);
}

inline WeakDataset random_classification(int n, int d, int k, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x = random_matrix(n, d, rng);
  std::vector<int> y(n);
  for (int i = 0; i < n; ++i) y[i] = static_cast<int>(rng() % k);
  return WeakDataset::classification(std::move(x), std::move(y), k);
}

inline WeakDataset random_regression(int n, int d, std::uint64_t seed) {
  Rng rng(seed);
  Matrix x = random_matrix(n, d, rng);
  Vector y = random_vector(n, rng);
  return WeakDataset::regression(std::move(x), std::move(y));
}

// Weights in [0.2, 1]; random simplex rows (classification) or shifts.
inline LabelQualityParams random_params(const WeakDataset& d, std::uint64_t seed) {
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  LabelQualityParams p = pgs::identity_params(d);
  for (int i = 0; i < d.size(); ++i) {
    p.w(i) = 0.2 + 0.8 * unit(rng);
    if (d.task().is_classification()) {
      for (int j = 0; j < p.q.cols(); ++j) p.q(i, j) = std::exp(normal(rng));
      p.q.row(i) /= p.q.row(i).sum();
    } else {
      p.q(i, 0) = 0.3 * normal(rng);
    }
  }
  return p;
}

inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-5) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector a = x;
    Vector b = x;
    a(i) += h;
    b(i) -= h;
    g(i) = (f(a) - f(b)) / (2.0 * h);
  }
  return g;
}

inline double rel_err(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const double scale = std::max(a.lpNorm<Eigen::Infinity>(), b.lpNorm<Eigen::Infinity>());
  if (scale == 0.0) return 0.0;
  return (a - b).lpNorm<Eigen::Infinity>() / scale;
}

}  // namespace testutil
