#pragma once

// Experiment construction: synthetic data, noise injection, label masking,
// bootstrap ensembles, validation bias and evaluation metrics.

#include <cstdint>
#include <string>
#include <vector>

#include "pgs/core.hpp"
#include "pgs/pgs.hpp"

namespace pgs {

// Decorrelated child seed; used wherever one seed drives several draws.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

struct Injected {
  WeakDataset data;
  PlantedTruth truth;
};

// Exactly round(ratio * n) instances, chosen uniformly, get a label drawn
// uniformly from the other k - 1 classes.
Injected inject_uniform_flip(const WeakDataset& d, double ratio, std::uint64_t seed);

// Adds N(0, sigma^2) to round(fraction * n) uniformly chosen labels (all of
// them by default); the chosen instances are marked corrupted.
Injected inject_gauss_noise(const WeakDataset& d, double sigma, std::uint64_t seed,
                            double fraction = 1.0);

// Puts the recorded true labels back.
WeakDataset restore_truth(const WeakDataset& noisy, const PlantedTruth& truth);

// Marks round(fraction * n) instances labeled, stratified by class
// (largest-remainder quotas) for classification.
WeakDataset mask_labels(const WeakDataset& d, double labeled_fraction, std::uint64_t seed);

// m bootstrap members of size n_v drawn with replacement.
ValidationEnsemble make_ensemble(const WeakDataset& val, int m, std::uint64_t seed);

// Subsamples so that |group A| : |group B| = ratio_a : ratio_b with the
// largest feasible total. Group A is the listed classes, B the rest.
WeakDataset bias_validation(const WeakDataset& val, const std::vector<int>& group_a_classes,
                            double ratio_a, double ratio_b, std::uint64_t seed);

enum class MetricKind { Accuracy, MeanSquaredError, CorrectionF1, WeightAuc };

std::string to_string(MetricKind k);

struct Metric {
  MetricKind kind = MetricKind::Accuracy;
  double value = 0.0;
};

// Accuracy (argmax, first index on ties) or mean squared error.
Metric evaluate(const ModelSpec& spec, const Vector& theta, const WeakDataset& test,
                MetricKind metric);

// Positives are proposed corrections; a true positive is a corrupted instance
// whose proposal equals its true label.
Metric correction_f1(const std::vector<Correction>& proposals, const PlantedTruth& truth);

// AUC of -w_i as a score for the corruption mask (ties count one half).
Metric weight_auc(const LabelQualityParams& p, const PlantedTruth& truth);

// Expected F1 of a corrector that flags `proposals` instances uniformly at
// random and proposes a uniformly random other class for each.
double random_correction_f1(int n, int corrupted, int proposals, int k);

struct GaussianMixtureOptions {
  int n = 400;
  int dim = 10;
  int classes = 2;
  double separation = 2.0;  // class means lie at radius separation / 2
};

// Balanced mixture of unit-covariance Gaussians. The class means depend only
// on `problem_seed`, so pools drawn with different sample seeds share them.
WeakDataset gaussian_mixture(const GaussianMixtureOptions& opts, std::uint64_t problem_seed,
                             std::uint64_t sample_seed);

// y = x^T beta + 1 + N(0, noise_std^2), x ~ N(0, I); beta depends on problem_seed.
WeakDataset linear_data(int n, int dim, double noise_std, std::uint64_t problem_seed,
                        std::uint64_t sample_seed);

// Shuffles 0..n-1 and cuts consecutive blocks of the given sizes.
std::vector<IndexList> random_split(int n, const std::vector<int>& sizes, std::uint64_t seed);

}  // namespace pgs
