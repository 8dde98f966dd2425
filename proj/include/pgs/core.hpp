#pragma once

// Domain types shared by the whole library. All reals are 64-bit.

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace pgs {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowVector = Eigen::RowVectorXd;
using Mask = std::vector<bool>;
using IndexList = std::vector<int>;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskType { Classification, Regression };

struct TaskKind {
  TaskType type = TaskType::Classification;
  int classes = 2;  // meaningful for classification only

  static TaskKind classification(int k);
  static TaskKind regression() { return {TaskType::Regression, 1}; }

  bool is_classification() const { return type == TaskType::Classification; }
  // Width of the label-transition block Q: k for classification, 1 for regression.
  int q_width() const { return is_classification() ? classes : 1; }
  bool operator==(const TaskKind&) const = default;
};

// Features plus possibly noisy or missing labels.
//
// Classification labels live in `classes`, regression labels in `targets`;
// the other container is empty. Instances with labeled_mask[i] == false
// carry a placeholder label that is never trusted.
class WeakDataset {
 public:
  WeakDataset() = default;

  static WeakDataset classification(Matrix features, std::vector<int> labels, int k,
                                    Mask labeled_mask = {});
  static WeakDataset regression(Matrix features, Vector labels, Mask labeled_mask = {});

  int size() const { return static_cast<int>(features_.rows()); }
  int dim() const { return static_cast<int>(features_.cols()); }
  const TaskKind& task() const { return task_; }
  const Matrix& features() const { return features_; }
  const std::vector<int>& classes() const { return classes_; }
  const Vector& targets() const { return targets_; }
  const Mask& labeled_mask() const { return labeled_; }
  int labeled_count() const;

  // Rows selected by `indices`, in that order (duplicates allowed).
  WeakDataset subset(const IndexList& indices) const;
  WeakDataset with_classes(std::vector<int> labels) const;
  WeakDataset with_targets(Vector labels) const;
  WeakDataset with_labeled_mask(Mask mask) const;

  // Concatenation; tasks must match.
  static WeakDataset concat(const WeakDataset& a, const WeakDataset& b);

 private:
  friend void validate_dataset(const WeakDataset& d);
  Matrix features_;
  std::vector<int> classes_;
  Vector targets_;
  TaskKind task_;
  Mask labeled_;
};

// Throws Error naming the first offending instance.
void validate_dataset(const WeakDataset& d);

struct PlantedTruth {
  std::vector<int> true_classes;  // classification
  Vector true_targets;            // regression
  Mask corruption_mask;

  int size() const { return static_cast<int>(corruption_mask.size()); }
  int corrupted_count() const;
};

// Decision variables of the upper level.
//
// q has n rows and task.q_width() columns: a per-instance class distribution
// for classification, an additive label shift for regression.
struct LabelQualityParams {
  Vector w;
  Matrix q;
  Mask frozen;

  int size() const { return static_cast<int>(w.size()); }
  int free_count() const;
};

enum class WslMode { LabelNoise, SemiSupervised };

// Recovery point: w = 1, Q one-hot at y (classification) or 0 (regression).
// Frozen mirrors labeled_mask in semi-supervised mode and is all-false otherwise.
LabelQualityParams identity_params(const WeakDataset& d, WslMode mode = WslMode::LabelNoise);

void validate_params(const LabelQualityParams& p, const TaskKind& task, int n);

struct FeasibleRegion {
  double eps1 = 0.0;
  double eps2 = 0.0;
};

// Default region: eps1 = half of the free instances, eps2 = 0.6 for
// classification or 0.5 * sqrt(n) * label std for regression.
FeasibleRegion default_region(const WeakDataset& d, const LabelQualityParams& p);

void validate_region(const FeasibleRegion& r, const TaskKind& task, int n);

// Rows covered by the eps2 cap: non-frozen instances whose label is present.
Mask capped_rows(const Mask& frozen, const Mask& labeled);

// Mean of 1 - Q[i, y_i] over the rows with capped[i] set (0 when none are).
double mean_label_distance(const Matrix& q, const std::vector<int>& labels, const Mask& capped);

// Checks (w, Q) against the region with tolerance `tol`.
bool is_feasible(const LabelQualityParams& p, const WeakDataset& d, const FeasibleRegion& r,
                 double tol = 1e-9);

struct ValidationEnsemble {
  WeakDataset base_set;
  std::vector<IndexList> member_indices;
  Vector baseline_losses;  // empty until populated

  int members() const { return static_cast<int>(member_indices.size()); }
  bool has_baseline() const { return baseline_losses.size() == members(); }
};

void validate_ensemble(const ValidationEnsemble& e);

enum class ModelFamily { LinearRegression, SoftmaxRegression, TwoLayerMlp };

struct ModelSpec {
  ModelFamily family = ModelFamily::SoftmaxRegression;
  int input_dim = 1;
  int outputs = 2;  // k for classification, 1 for regression
  int hidden_units = 0;
  double l2_reg = 1e-4;

  static ModelSpec linear_regression(int d, double l2_reg = 1e-4);
  static ModelSpec softmax_regression(int d, int k, double l2_reg = 1e-4);
  static ModelSpec mlp(int d, int outputs, int hidden, double l2_reg = 0.0);

  int param_count() const;
  bool is_convex() const { return family != ModelFamily::TwoLayerMlp; }
  bool classifies() const { return family != ModelFamily::LinearRegression && outputs >= 2; }
};

void validate_spec(const ModelSpec& s);
// The model must be able to consume the dataset (dims and task).
void check_compatible(const ModelSpec& s, const WeakDataset& d);

struct ModelParams {
  Vector theta;
};

// Outcome of one method run on one seed.
struct RunReport {
  std::string method;
  std::uint64_t seed = 0;
  LabelQualityParams params;
  ModelParams theta;
  Vector baseline_losses;   // c_i
  Vector val_losses_before; // members at the raw-label model
  Vector val_losses_after;  // members at the final model
  Vector gaps_after;        // val_losses_after - c
  bool unsafe = false;
  std::vector<double> objective_trace;  // upper objective per outer iterate, then final
  std::map<std::string, double> test_metrics;
  std::map<std::string, double> baseline_metrics;
  std::map<std::string, std::string> diagnostics;
  double wall_clock_seconds = 0.0;
  std::string config_echo;  // canonical JSON of the generating config
};

enum class SafenessMode { Hinge, Literal };

struct CgSettings {
  int max_iters = 0;  // 0 means 2 * dim(theta)
  double tol = 1e-8;
};

struct AdamSettings {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct PgsConfig {
  double lambda = 1.0;
  SafenessMode safeness_mode = SafenessMode::Hinge;
  int lower_iters = 500;  // T
  int upper_iters = 20;   // L
  double lower_step = 0.1;
  AdamSettings upper;
  CgSettings cg;
  double inner_tol = 0.0;  // 0 means the family default of train_convex
  std::uint64_t seed = 0;
};

void validate_config(const PgsConfig& c);

std::string to_string(ModelFamily f);
std::string to_string(SafenessMode m);
ModelFamily parse_family(const std::string& s);
SafenessMode parse_safeness(const std::string& s);

}  // namespace pgs
