#include "pgs/harness.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "pgs/model.hpp"

namespace pgs {

namespace {

using Rng = std::mt19937_64;

int rounded_count(double fraction, int n) {
  return static_cast<int>(std::llround(fraction * static_cast<double>(n)));
}

IndexList shuffled_indices(int n, Rng& rng) {
  IndexList idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finalizer
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

Injected inject_uniform_flip(const WeakDataset& d, double ratio, std::uint64_t seed) {
  if (!d.task().is_classification()) throw Error("uniform flip noise needs a classification task");
  if (!(ratio >= 0.0 && ratio <= 1.0)) throw Error("flip ratio must lie in [0,1]");
  const int n = d.size();
  const int k = d.task().classes;
  Rng rng(seed);
  const IndexList order = shuffled_indices(n, rng);
  const int flips = rounded_count(ratio, n);
  Injected out;
  out.truth.true_classes = d.classes();
  out.truth.corruption_mask.assign(n, false);
  std::vector<int> labels = d.classes();
  std::uniform_int_distribution<int> other(1, k - 1);
  for (int r = 0; r < flips; ++r) {
    const int i = order[r];
    labels[i] = (labels[i] + other(rng)) % k;
    out.truth.corruption_mask[i] = true;
  }
  out.data = d.with_classes(std::move(labels));
  return out;
}

Injected inject_gauss_noise(const WeakDataset& d, double sigma, std::uint64_t seed,
                            double fraction) {
  if (d.task().is_classification()) throw Error("gauss noise needs a regression task");
  if (!(sigma >= 0.0)) throw Error("sigma must be >= 0");
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw Error("noise fraction must lie in [0,1]");
  const int n = d.size();
  Rng rng(seed);
  Injected out;
  out.truth.true_targets = d.targets();
  out.truth.corruption_mask.assign(n, false);
  Vector labels = d.targets();
  std::normal_distribution<double> normal(0.0, 1.0);
  if (fraction >= 1.0) {
    for (int i = 0; i < n; ++i) {
      labels(i) += sigma * normal(rng);
      out.truth.corruption_mask[i] = true;
    }
  } else {
    const IndexList order = shuffled_indices(n, rng);
    const int count = rounded_count(fraction, n);
    for (int r = 0; r < count; ++r) {
      labels(order[r]) += sigma * normal(rng);
      out.truth.corruption_mask[order[r]] = true;
    }
  }
  out.data = d.with_targets(std::move(labels));
  return out;
}

WeakDataset restore_truth(const WeakDataset& noisy, const PlantedTruth& truth) {
  if (noisy.task().is_classification()) return noisy.with_classes(truth.true_classes);
  return noisy.with_targets(truth.true_targets);
}

WeakDataset mask_labels(const WeakDataset& d, double labeled_fraction, std::uint64_t seed) {
  if (!(labeled_fraction > 0.0 && labeled_fraction <= 1.0)) {
    throw Error("labeled fraction must lie in (0,1]");
  }
  const int n = d.size();
  Rng rng(seed);
  Mask mask(n, false);
  const int total = rounded_count(labeled_fraction, n);
  if (!d.task().is_classification()) {
    const IndexList order = shuffled_indices(n, rng);
    for (int r = 0; r < total; ++r) mask[order[r]] = true;
    return d.with_labeled_mask(std::move(mask));
  }
  const int k = d.task().classes;
  std::vector<IndexList> members(k);
  for (int i = 0; i < n; ++i) members[d.classes()[i]].push_back(i);
  std::vector<int> quota(k);
  std::vector<double> remainder(k);
  int assigned = 0;
  for (int c = 0; c < k; ++c) {
    const double exact = labeled_fraction * static_cast<double>(members[c].size());
    quota[c] = static_cast<int>(std::floor(exact));
    remainder[c] = exact - quota[c];
    assigned += quota[c];
  }
  std::vector<int> by_remainder(k);
  std::iota(by_remainder.begin(), by_remainder.end(), 0);
  std::stable_sort(by_remainder.begin(), by_remainder.end(),
                   [&](int a, int b) { return remainder[a] > remainder[b]; });
  for (int r = 0; assigned < total && r < k; ++r) {
    const int c = by_remainder[r];
    if (quota[c] < static_cast<int>(members[c].size())) {
      ++quota[c];
      ++assigned;
    }
  }
  for (int c = 0; c < k; ++c) {
    IndexList& idx = members[c];
    std::shuffle(idx.begin(), idx.end(), rng);
    for (int r = 0; r < quota[c]; ++r) mask[idx[r]] = true;
  }
  return d.with_labeled_mask(std::move(mask));
}

ValidationEnsemble make_ensemble(const WeakDataset& val, int m, std::uint64_t seed) {
  if (m < 1) throw Error("ensemble needs m >= 1");
  validate_dataset(val);
  const int nv = val.size();
  Rng rng(seed);
  std::uniform_int_distribution<int> pick(0, nv - 1);
  ValidationEnsemble e;
  e.base_set = val;
  e.member_indices.assign(m, IndexList(nv));
  for (auto& member : e.member_indices) {
    for (int& i : member) i = pick(rng);
  }
  return e;
}

WeakDataset bias_validation(const WeakDataset& val, const std::vector<int>& group_a_classes,
                            double ratio_a, double ratio_b, std::uint64_t seed) {
  if (!val.task().is_classification()) throw Error("bias_validation needs a classification task");
  if (!(ratio_a > 0.0 && ratio_b > 0.0)) throw Error("bias ratios must be positive");
  const int k = val.task().classes;
  std::vector<bool> in_a(k, false);
  for (int c : group_a_classes) {
    if (c < 0 || c >= k) throw Error("bias group class out of range");
    in_a[c] = true;
  }
  if (std::none_of(in_a.begin(), in_a.end(), [](bool b) { return b; }) ||
      std::all_of(in_a.begin(), in_a.end(), [](bool b) { return b; })) {
    throw Error("bias groups must split the classes into two nonempty parts");
  }
  IndexList a, b;
  for (int i = 0; i < val.size(); ++i) (in_a[val.classes()[i]] ? a : b).push_back(i);
  const double scale = std::min(a.size() / ratio_a, b.size() / ratio_b);
  const int keep_a = std::min<int>(a.size(), static_cast<int>(std::floor(scale * ratio_a + 1e-9)));
  const int keep_b = std::min<int>(b.size(), static_cast<int>(std::floor(scale * ratio_b + 1e-9)));
  Rng rng(seed);
  std::shuffle(a.begin(), a.end(), rng);
  std::shuffle(b.begin(), b.end(), rng);
  IndexList keep(a.begin(), a.begin() + keep_a);
  keep.insert(keep.end(), b.begin(), b.begin() + keep_b);
  std::sort(keep.begin(), keep.end());
  if (keep.empty()) throw Error("bias_validation would produce an empty set");
  return val.subset(keep);
}

std::string to_string(MetricKind k) {
  switch (k) {
    case MetricKind::Accuracy: return "accuracy";
    case MetricKind::MeanSquaredError: return "mse";
    case MetricKind::CorrectionF1: return "correction_f1";
    case MetricKind::WeightAuc: return "weight_auc";
  }
  return "?";
}

Metric evaluate(const ModelSpec& spec, const Vector& theta, const WeakDataset& test,
                MetricKind metric) {
  if (test.size() == 0) throw Error("evaluate: empty test set");
  const Matrix pred = predict(spec, theta, test.features());
  Metric out{metric, 0.0};
  if (metric == MetricKind::Accuracy) {
    if (!test.task().is_classification()) throw Error("accuracy needs a classification task");
    int correct = 0;
    for (int i = 0; i < test.size(); ++i) {
      Eigen::Index best = 0;
      pred.row(i).maxCoeff(&best);
      if (static_cast<int>(best) == test.classes()[i]) ++correct;
    }
    out.value = static_cast<double>(correct) / test.size();
  } else if (metric == MetricKind::MeanSquaredError) {
    if (test.task().is_classification()) throw Error("mse needs a regression task");
    out.value = (pred.col(0) - test.targets()).squaredNorm() / test.size();
  } else {
    throw Error("evaluate: metric " + to_string(metric) + " is not a test-set metric");
  }
  return out;
}

Metric correction_f1(const std::vector<Correction>& proposals, const PlantedTruth& truth) {
  int positives = 0;
  int hits = 0;
  for (const Correction& c : proposals) {
    if (!c.corrected) continue;
    ++positives;
    if (c.index < 0 || c.index >= truth.size()) throw Error("correction index out of range");
    if (truth.corruption_mask[c.index] && truth.true_classes[c.index] == c.proposed) ++hits;
  }
  const int corrupted = truth.corrupted_count();
  Metric out{MetricKind::CorrectionF1, 0.0};
  if (positives == 0 || corrupted == 0 || hits == 0) return out;
  const double precision = static_cast<double>(hits) / positives;
  const double recall = static_cast<double>(hits) / corrupted;
  out.value = 2.0 * precision * recall / (precision + recall);
  return out;
}

Metric weight_auc(const LabelQualityParams& p, const PlantedTruth& truth) {
  const int n = p.size();
  if (truth.size() != n) throw Error("weight_auc: truth and params differ in length");
  // Mann-Whitney U with average ranks over the score -w.
  IndexList order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p.w(a) > p.w(b); });
  std::vector<double> rank(n);
  for (int r = 0; r < n;) {
    int end = r;
    while (end + 1 < n && p.w(order[end + 1]) == p.w(order[r])) ++end;
    const double avg = 0.5 * (r + end) + 1.0;
    for (int t = r; t <= end; ++t) rank[order[t]] = avg;
    r = end + 1;
  }
  double pos = 0.0;
  double rank_sum = 0.0;
  for (int i = 0; i < n; ++i) {
    if (truth.corruption_mask[i]) {
      pos += 1.0;
      rank_sum += rank[i];
    }
  }
  const double neg = n - pos;
  Metric out{MetricKind::WeightAuc, 0.5};
  if (pos == 0.0 || neg == 0.0) return out;
  out.value = (rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg);
  return out;
}

double random_correction_f1(int n, int corrupted, int proposals, int k) {
  if (proposals == 0 || corrupted == 0 || n == 0) return 0.0;
  const double hit_rate = (static_cast<double>(corrupted) / n) / (k - 1);
  const double precision = hit_rate;
  const double recall = proposals * hit_rate / corrupted;
  return 2.0 * precision * recall / (precision + recall);
}

WeakDataset gaussian_mixture(const GaussianMixtureOptions& opts, std::uint64_t problem_seed,
                             std::uint64_t sample_seed) {
  if (opts.n < 1 || opts.dim < 1 || opts.classes < 2) throw Error("invalid mixture options");
  Rng prng(problem_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Matrix means(opts.classes, opts.dim);
  for (int c = 0; c < opts.classes; ++c) {
    for (int j = 0; j < opts.dim; ++j) means(c, j) = normal(prng);
    means.row(c) *= 0.5 * opts.separation / means.row(c).norm();
  }
  if (opts.classes == 2) means.row(1) = -means.row(0);
  Rng rng(sample_seed);
  std::vector<int> labels(opts.n);
  for (int i = 0; i < opts.n; ++i) labels[i] = i % opts.classes;
  std::shuffle(labels.begin(), labels.end(), rng);
  Matrix x(opts.n, opts.dim);
  for (int i = 0; i < opts.n; ++i) {
    for (int j = 0; j < opts.dim; ++j) x(i, j) = means(labels[i], j) + normal(rng);
  }
  return WeakDataset::classification(std::move(x), std::move(labels), opts.classes);
}

WeakDataset linear_data(int n, int dim, double noise_std, std::uint64_t problem_seed,
                        std::uint64_t sample_seed) {
  if (n < 1 || dim < 1 || !(noise_std >= 0.0)) throw Error("invalid linear data options");
  Rng prng(problem_seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector beta(dim);
  for (int j = 0; j < dim; ++j) beta(j) = normal(prng);
  beta /= std::sqrt(static_cast<double>(dim));
  Rng rng(sample_seed);
  Matrix x(n, dim);
  Vector y(n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) x(i, j) = normal(rng);
    y(i) = x.row(i).dot(beta) + 1.0 + noise_std * normal(rng);
  }
  return WeakDataset::regression(std::move(x), std::move(y));
}

std::vector<IndexList> random_split(int n, const std::vector<int>& sizes, std::uint64_t seed) {
  const int total = std::accumulate(sizes.begin(), sizes.end(), 0);
  if (total > n) throw Error("split sizes exceed the pool size");
  Rng rng(seed);
  const IndexList order = shuffled_indices(n, rng);
  std::vector<IndexList> out;
  int start = 0;
  for (int s : sizes) {
    if (s < 0) throw Error("negative split size");
    out.emplace_back(order.begin() + start, order.begin() + start + s);
    start += s;
  }
  return out;
}

}  // namespace pgs
