#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <set>

#include "pgs/harness.hpp"
#include "test_util.hpp"

using namespace pgs;

TEST_CASE("uniform flips change exactly round(ratio * n) labels") {
  const auto clean = testutil::random_classification(101, 2, 4, 1);
  for (double ratio : {0.0, 0.25, 0.4, 1.0}) {
    const Injected inj = inject_uniform_flip(clean, ratio, 7);
    int changed = 0;
    for (int i = 0; i < clean.size(); ++i) {
      const bool differs = inj.data.classes()[i] != clean.classes()[i];
      CHECK(differs == inj.truth.corruption_mask[i]);
      changed += differs;
    }
    CHECK(changed == static_cast<int>(std::llround(ratio * 101)));
    CHECK(inj.truth.corrupted_count() == changed);
    CHECK(restore_truth(inj.data, inj.truth).classes() == clean.classes());
  }
  const auto binary = testutil::random_classification(10, 1, 2, 2);
  const Injected all = inject_uniform_flip(binary, 1.0, 0);
  for (int i = 0; i < 10; ++i) CHECK(all.data.classes()[i] == 1 - binary.classes()[i]);
  CHECK_THROWS_AS(inject_uniform_flip(binary, 1.5, 0), Error);
}

TEST_CASE("flipped labels are spread uniformly over the other classes") {
  const auto clean = WeakDataset::classification(Matrix::Zero(30000, 1), std::vector<int>(30000, 0), 4);
  const Injected inj = inject_uniform_flip(clean, 1.0, 3);
  std::vector<int> counts(4, 0);
  for (int y : inj.data.classes()) ++counts[y];
  CHECK(counts[0] == 0);
  for (int c = 1; c < 4; ++c) CHECK(std::abs(counts[c] - 10000) < 400);
}

TEST_CASE("Gaussian noise has the requested scale") {
  const auto clean = WeakDataset::regression(Matrix::Zero(20000, 1), Vector::Zero(20000));
  const Injected inj = inject_gauss_noise(clean, 0.5, 11);
  const Vector& y = inj.data.targets();
  const double mean = y.mean();
  const double sd = std::sqrt((y.array() - mean).square().sum() / (y.size() - 1));
  CHECK(std::abs(mean) < 4.0 * 0.5 / std::sqrt(20000.0));
  CHECK(sd == doctest::Approx(0.5).epsilon(0.03));
  CHECK(inj.truth.corrupted_count() == 20000);

  const Injected half = inject_gauss_noise(clean, 0.5, 11, 0.25);
  CHECK(half.truth.corrupted_count() == 5000);
  for (int i = 0; i < 20000; ++i) {
    CHECK((half.data.targets()(i) != 0.0) == half.truth.corruption_mask[i]);
  }
  CHECK(inject_gauss_noise(clean, 0.0, 1).data.targets() == clean.targets());
}

TEST_CASE("label masking is stratified by class") {
  std::vector<int> labels;
  for (int c = 0; c < 3; ++c) labels.insert(labels.end(), 10 * (c + 1), c);
  const auto d = WeakDataset::classification(Matrix::Zero(60, 1), labels, 3);
  const auto masked = mask_labels(d, 0.3, 5);
  CHECK(masked.labeled_count() == 18);
  for (int c = 0; c < 3; ++c) {
    int in_class = 0;
    for (int i = 0; i < 60; ++i) in_class += labels[i] == c && masked.labeled_mask()[i];
    CHECK(std::abs(in_class - 0.3 * 10 * (c + 1)) <= 1.0);
  }
  CHECK(mask_labels(d, 1.0, 5).labeled_count() == 60);
  CHECK_THROWS_AS(mask_labels(d, 0.0, 5), Error);
}

TEST_CASE("ensembles are bootstrap resamples") {
  const auto val = testutil::random_classification(25, 2, 2, 0);
  const auto e = make_ensemble(val, 4, 9);
  CHECK(e.members() == 4);
  for (const auto& m : e.member_indices) {
    CHECK(m.size() == 25);
    for (int i : m) CHECK((i >= 0 && i < 25));
  }
  CHECK(e.member_indices[0] != e.member_indices[1]);
  CHECK(make_ensemble(val, 4, 9).member_indices == e.member_indices);
  CHECK_FALSE(e.has_baseline());
}

TEST_CASE("validation bias keeps the requested group ratio") {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 4);
  const auto val = WeakDataset::classification(Matrix::Zero(100, 1), labels, 4);
  const auto biased = bias_validation(val, {0, 1}, 3.0, 1.0, 2);
  int a = 0;
  int b = 0;
  for (int y : biased.classes()) (y < 2 ? a : b)++;
  CHECK(a == 50);
  CHECK(b == 16);
  CHECK_THROWS_AS(bias_validation(val, {0, 1, 2, 3}, 1.0, 1.0, 0), Error);
}

TEST_CASE("evaluation metrics") {
  // A constant predictor at the mean has mean squared error equal to the variance.
  testutil::Rng rng(1);
  const auto test = WeakDataset::regression(testutil::random_matrix(50, 2, rng),
                                            testutil::random_vector(50, rng));
  const auto spec = ModelSpec::linear_regression(2);
  Vector theta = Vector::Zero(3);
  const double mean = test.targets().mean();
  theta(2) = mean;
  const double var = (test.targets().array() - mean).square().mean();
  CHECK(evaluate(spec, theta, test, MetricKind::MeanSquaredError).value ==
        doctest::Approx(var).epsilon(1e-12));

  Matrix x(4, 1);
  x << -2, -1, 1, 2;
  const auto cls = WeakDataset::classification(x, {0, 1, 1, 1}, 2);
  const auto soft = ModelSpec::softmax_regression(1, 2);
  Vector th(4);
  th << -1.0, 1.0, 0.0, 0.0;  // predicts class 1 for positive x
  CHECK(evaluate(soft, th, cls, MetricKind::Accuracy).value == doctest::Approx(0.75));
  CHECK_THROWS_AS(evaluate(soft, th, cls, MetricKind::MeanSquaredError), Error);
}

TEST_CASE("correction F1 reference fixture") {
  // Four corrupted instances; three proposals, two of them right: P = 2/3, R = 1/2.
  PlantedTruth truth;
  truth.true_classes = {1, 2, 0, 1, 0, 0};
  truth.corruption_mask = {true, true, true, true, false, false};
  std::vector<Correction> c(6);
  for (int i = 0; i < 6; ++i) c[i].index = i;
  c[0] = {0, 1, true, false};
  c[1] = {1, 2, true, false};
  c[4] = {4, 2, true, false};
  CHECK(correction_f1(c, truth).value == doctest::Approx(4.0 / 7.0).epsilon(1e-14));
  // A proposal to a wrong class at a corrupted index is not a hit.
  c[1].proposed = 0;
  CHECK(correction_f1(c, truth).value == doctest::Approx(2.0 * (1.0 / 3.0) * 0.25 / (1.0 / 3.0 + 0.25)));
  for (auto& x : c) x.corrected = false;
  CHECK(correction_f1(c, truth).value == 0.0);
}

TEST_CASE("weight AUC agrees with pairwise counting") {
  testutil::Rng rng(3);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 30;
    LabelQualityParams p;
    p.w.resize(n);
    PlantedTruth t;
    t.corruption_mask.resize(n);
    for (int i = 0; i < n; ++i) {
      p.w(i) = level(rng) / 5.0;  // coarse levels force ties
      t.corruption_mask[i] = rng() % 3 == 0;
    }
    double score = 0.0;
    double pairs = 0.0;
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        if (!t.corruption_mask[i] || t.corruption_mask[j]) continue;
        pairs += 1.0;
        if (p.w(i) < p.w(j)) score += 1.0;
        else if (p.w(i) == p.w(j)) score += 0.5;
      }
    }
    const double expected = pairs == 0.0 ? 0.5 : score / pairs;
    CHECK(weight_auc(p, t).value == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("random-correction F1 matches simulation") {
  const int n = 200;
  const int corrupted = 80;
  const int proposals = 50;
  const int k = 3;
  testutil::Rng rng(8);
  PlantedTruth truth;
  truth.true_classes.assign(n, 0);
  truth.corruption_mask.assign(n, false);
  for (int i = 0; i < corrupted; ++i) truth.corruption_mask[i] = true;
  double total = 0.0;
  const int reps = 4000;
  IndexList idx(n);
  for (int i = 0; i < n; ++i) idx[i] = i;
  for (int r = 0; r < reps; ++r) {
    std::shuffle(idx.begin(), idx.end(), rng);
    std::vector<Correction> c;
    for (int s = 0; s < proposals; ++s) {
      // The observed label of a corrupted instance is never the true one, so
      // a random different class is right with probability 1/(k-1).
      const int proposed = static_cast<int>(rng() % (k - 1));
      c.push_back({idx[s], proposed, true, false});
    }
    total += correction_f1(c, truth).value;
  }
  CHECK(total / reps == doctest::Approx(random_correction_f1(n, corrupted, proposals, k)).epsilon(0.05));
}

TEST_CASE("synthetic generators") {
  GaussianMixtureOptions o;
  o.n = 20000;
  o.dim = 3;
  o.separation = 3.0;
  const auto g = gaussian_mixture(o, 1, 2);
  Vector m0 = Vector::Zero(3);
  Vector m1 = Vector::Zero(3);
  int c0 = 0;
  for (int i = 0; i < o.n; ++i) {
    if (g.classes()[i] == 0) {
      m0 += g.features().row(i).transpose();
      ++c0;
    } else {
      m1 += g.features().row(i).transpose();
    }
  }
  CHECK(c0 == 10000);
  m0 /= c0;
  m1 /= o.n - c0;
  CHECK((m0 - m1).norm() == doctest::Approx(3.0).epsilon(0.03));
  CHECK(gaussian_mixture(o, 1, 2).features() == g.features());
  CHECK(gaussian_mixture(o, 1, 3).features() != g.features());

  // Noise-free linear data is fit exactly by least squares.
  const auto lin = linear_data(40, 3, 0.0, 4, 5);
  Matrix a(40, 4);
  a << lin.features(), Vector::Ones(40);
  const Vector coef = a.colPivHouseholderQr().solve(lin.targets());
  CHECK((a * coef - lin.targets()).norm() < 1e-10);
  CHECK(coef(3) == doctest::Approx(1.0));
}

TEST_CASE("random splits are disjoint") {
  const auto parts = random_split(50, {10, 20, 5}, 3);
  std::set<int> seen;
  for (const auto& p : parts) seen.insert(p.begin(), p.end());
  CHECK(seen.size() == 35);
  CHECK(parts[1].size() == 20);
  CHECK_THROWS_AS(random_split(10, {6, 6}, 0), Error);
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) != derive_seed(2, 2));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
