#include "pgs/core.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace pgs {

namespace {

template <typename... Args>
[[noreturn]] void fail(Args&&... args) {
  std::ostringstream os;
  (os << ... << args);
  throw Error(os.str());
}

}  // namespace

TaskKind TaskKind::classification(int k) {
  if (k < 2) fail("classification needs at least 2 classes, got ", k);
  return {TaskType::Classification, k};
}

WeakDataset WeakDataset::classification(Matrix features, std::vector<int> labels, int k,
                                        Mask labeled_mask) {
  WeakDataset d;
  d.task_ = TaskKind::classification(k);
  if (labeled_mask.empty()) labeled_mask.assign(features.rows(), true);
  d.features_ = std::move(features);
  d.classes_ = std::move(labels);
  d.labeled_ = std::move(labeled_mask);
  validate_dataset(d);
  return d;
}

WeakDataset WeakDataset::regression(Matrix features, Vector labels, Mask labeled_mask) {
  WeakDataset d;
  d.task_ = TaskKind::regression();
  if (labeled_mask.empty()) labeled_mask.assign(features.rows(), true);
  d.features_ = std::move(features);
  d.targets_ = std::move(labels);
  d.labeled_ = std::move(labeled_mask);
  validate_dataset(d);
  return d;
}

int WeakDataset::labeled_count() const {
  return static_cast<int>(std::count(labeled_.begin(), labeled_.end(), true));
}

WeakDataset WeakDataset::subset(const IndexList& indices) const {
  WeakDataset out;
  out.task_ = task_;
  out.features_.resize(static_cast<Eigen::Index>(indices.size()), features_.cols());
  if (task_.is_classification()) {
    out.classes_.reserve(indices.size());
  } else {
    out.targets_.resize(static_cast<Eigen::Index>(indices.size()));
  }
  out.labeled_.reserve(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const int i = indices[r];
    if (i < 0 || i >= size()) fail("subset index ", i, " out of range [0,", size(), ")");
    out.features_.row(static_cast<Eigen::Index>(r)) = features_.row(i);
    if (task_.is_classification()) {
      out.classes_.push_back(classes_[i]);
    } else {
      out.targets_(static_cast<Eigen::Index>(r)) = targets_(i);
    }
    out.labeled_.push_back(labeled_[i]);
  }
  validate_dataset(out);
  return out;
}

WeakDataset WeakDataset::with_classes(std::vector<int> labels) const {
  WeakDataset out = *this;
  out.classes_ = std::move(labels);
  validate_dataset(out);
  return out;
}

WeakDataset WeakDataset::with_targets(Vector labels) const {
  WeakDataset out = *this;
  out.targets_ = std::move(labels);
  validate_dataset(out);
  return out;
}

WeakDataset WeakDataset::with_labeled_mask(Mask mask) const {
  WeakDataset out = *this;
  out.labeled_ = std::move(mask);
  validate_dataset(out);
  return out;
}

WeakDataset WeakDataset::concat(const WeakDataset& a, const WeakDataset& b) {
  if (!(a.task_ == b.task_)) fail("cannot concatenate datasets of different tasks");
  if (a.dim() != b.dim()) fail("cannot concatenate datasets of dims ", a.dim(), " and ", b.dim());
  WeakDataset out;
  out.task_ = a.task_;
  out.features_.resize(a.size() + b.size(), a.dim());
  out.features_ << a.features_, b.features_;
  out.classes_ = a.classes_;
  out.classes_.insert(out.classes_.end(), b.classes_.begin(), b.classes_.end());
  if (!a.task_.is_classification()) {
    out.targets_.resize(a.size() + b.size());
    out.targets_ << a.targets_, b.targets_;
  }
  out.labeled_ = a.labeled_;
  out.labeled_.insert(out.labeled_.end(), b.labeled_.begin(), b.labeled_.end());
  validate_dataset(out);
  return out;
}

void validate_dataset(const WeakDataset& d) {
  const Eigen::Index n = d.features_.rows();
  if (n < 1) fail("dataset must contain at least one instance");
  if (d.features_.cols() < 1) fail("dataset must have at least one feature");
  if (static_cast<Eigen::Index>(d.labeled_.size()) != n) {
    fail("dimension mismatch: labeled_mask has ", d.labeled_.size(), " entries for ", n,
         " instances");
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index c = 0; c < d.features_.cols(); ++c) {
      if (!std::isfinite(d.features_(i, c))) fail("non-finite feature at index ", i);
    }
  }
  if (d.task_.is_classification()) {
    if (d.task_.classes < 2) fail("classification needs at least 2 classes");
    if (static_cast<Eigen::Index>(d.classes_.size()) != n) {
      fail("dimension mismatch: ", d.classes_.size(), " labels for ", n, " instances");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      const int y = d.classes_[i];
      if (y < 0 || y >= d.task_.classes) fail("label out of range at index ", i);
    }
  } else {
    if (d.targets_.size() != n) {
      fail("dimension mismatch: ", d.targets_.size(), " labels for ", n, " instances");
    }
    for (Eigen::Index i = 0; i < n; ++i) {
      if (!std::isfinite(d.targets_(i))) fail("non-finite label at index ", i);
    }
  }
}

int PlantedTruth::corrupted_count() const {
  return static_cast<int>(std::count(corruption_mask.begin(), corruption_mask.end(), true));
}

int LabelQualityParams::free_count() const {
  return static_cast<int>(std::count(frozen.begin(), frozen.end(), false));
}

LabelQualityParams identity_params(const WeakDataset& d, WslMode mode) {
  const int n = d.size();
  LabelQualityParams p;
  p.w = Vector::Ones(n);
  p.q = Matrix::Zero(n, d.task().q_width());
  if (d.task().is_classification()) {
    for (int i = 0; i < n; ++i) p.q(i, d.classes()[i]) = 1.0;
  }
  if (mode == WslMode::SemiSupervised) {
    p.frozen = d.labeled_mask();
  } else {
    p.frozen.assign(n, false);
  }
  return p;
}

void validate_params(const LabelQualityParams& p, const TaskKind& task, int n) {
  if (p.w.size() != n || p.q.rows() != n || static_cast<int>(p.frozen.size()) != n) {
    fail("dimension mismatch: label-quality params do not have ", n, " rows");
  }
  if (p.q.cols() != task.q_width()) {
    fail("dimension mismatch: Q has ", p.q.cols(), " columns, expected ", task.q_width());
  }
  for (int i = 0; i < n; ++i) {
    if (!(p.w(i) >= 0.0 && p.w(i) <= 1.0)) fail("weight out of [0,1] at index ", i);
    if (task.is_classification()) {
      double sum = 0.0;
      for (int j = 0; j < task.classes; ++j) {
        if (!(p.q(i, j) >= 0.0)) fail("negative transition entry at index ", i);
        sum += p.q(i, j);
      }
      if (std::abs(sum - 1.0) > 1e-8) fail("transition row does not sum to 1 at index ", i);
    } else if (!std::isfinite(p.q(i, 0))) {
      fail("non-finite label shift at index ", i);
    }
  }
}

FeasibleRegion default_region(const WeakDataset& d, const LabelQualityParams& p) {
  FeasibleRegion r;
  r.eps1 = 0.5 * p.free_count();
  if (d.task().is_classification()) {
    r.eps2 = 0.6;
  } else {
    const Vector& y = d.targets();
    const double mean = y.mean();
    const double var = (y.array() - mean).square().mean();
    r.eps2 = 0.5 * std::sqrt(static_cast<double>(d.size())) * std::sqrt(var);
  }
  return r;
}

void validate_region(const FeasibleRegion& r, const TaskKind& task, int n) {
  if (!(r.eps1 >= 0.0)) fail("eps1 must be >= 0");
  if (r.eps1 > n) fail("eps1 = ", r.eps1, " exceeds n = ", n);
  if (!(r.eps2 >= 0.0)) fail("eps2 must be >= 0");
  if (task.is_classification() && r.eps2 > 1.0) fail("eps2 must lie in [0,1] for classification");
}

Mask capped_rows(const Mask& frozen, const Mask& labeled) {
  Mask out(frozen.size());
  for (std::size_t i = 0; i < frozen.size(); ++i) out[i] = !frozen[i] && labeled[i];
  return out;
}

double mean_label_distance(const Matrix& q, const std::vector<int>& labels, const Mask& capped) {
  double sum = 0.0;
  int count = 0;
  for (Eigen::Index i = 0; i < q.rows(); ++i) {
    if (!capped[i]) continue;
    sum += 1.0 - q(i, labels[i]);
    ++count;
  }
  return count == 0 ? 0.0 : sum / count;
}

bool is_feasible(const LabelQualityParams& p, const WeakDataset& d, const FeasibleRegion& r,
                 double tol) {
  const int n = p.size();
  for (int i = 0; i < n; ++i) {
    if (p.w(i) < -tol || p.w(i) > 1.0 + tol) return false;
  }
  if (p.w.sum() < r.eps1 - tol) return false;
  const Mask capped = capped_rows(p.frozen, d.labeled_mask());
  if (d.task().is_classification()) {
    for (int i = 0; i < n; ++i) {
      if ((p.q.row(i).array() < -tol).any()) return false;
      if (std::abs(p.q.row(i).sum() - 1.0) > tol) return false;
    }
    if (mean_label_distance(p.q, d.classes(), capped) > r.eps2 + tol) return false;
  } else {
    double sq = 0.0;
    for (int i = 0; i < n; ++i) {
      if (capped[i]) sq += p.q(i, 0) * p.q(i, 0);
    }
    if (std::sqrt(sq) > r.eps2 + tol) return false;
  }
  return true;
}

void validate_ensemble(const ValidationEnsemble& e) {
  validate_dataset(e.base_set);
  if (e.member_indices.empty()) fail("validation ensemble needs at least one member");
  const int nv = e.base_set.size();
  for (std::size_t m = 0; m < e.member_indices.size(); ++m) {
    if (e.member_indices[m].empty()) fail("validation member ", m, " is empty");
    for (int i : e.member_indices[m]) {
      if (i < 0 || i >= nv) fail("validation member ", m, " index ", i, " out of range");
    }
  }
  if (e.baseline_losses.size() != 0) {
    if (e.baseline_losses.size() != e.members()) fail("baseline_losses length != members");
    if (!e.baseline_losses.allFinite()) fail("non-finite baseline loss");
  }
}

ModelSpec ModelSpec::linear_regression(int d, double l2_reg) {
  ModelSpec s{ModelFamily::LinearRegression, d, 1, 0, l2_reg};
  validate_spec(s);
  return s;
}

ModelSpec ModelSpec::softmax_regression(int d, int k, double l2_reg) {
  ModelSpec s{ModelFamily::SoftmaxRegression, d, k, 0, l2_reg};
  validate_spec(s);
  return s;
}

ModelSpec ModelSpec::mlp(int d, int outputs, int hidden, double l2_reg) {
  ModelSpec s{ModelFamily::TwoLayerMlp, d, outputs, hidden, l2_reg};
  validate_spec(s);
  return s;
}

int ModelSpec::param_count() const {
  if (family == ModelFamily::TwoLayerMlp) {
    return hidden_units * (input_dim + 1) + outputs * (hidden_units + 1);
  }
  return outputs * (input_dim + 1);
}

void validate_spec(const ModelSpec& s) {
  if (s.input_dim < 1) fail("model input_dim must be >= 1");
  if (!(s.l2_reg >= 0.0) || !std::isfinite(s.l2_reg)) fail("l2_reg must be finite and >= 0");
  switch (s.family) {
    case ModelFamily::LinearRegression:
      if (s.outputs != 1) fail("linear regression has exactly one output");
      break;
    case ModelFamily::SoftmaxRegression:
      if (s.outputs < 2) fail("softmax regression needs at least 2 classes");
      break;
    case ModelFamily::TwoLayerMlp:
      if (s.hidden_units < 1) fail("MLP needs hidden_units >= 1");
      if (s.outputs < 1) fail("MLP needs at least one output");
      break;
  }
}

void check_compatible(const ModelSpec& s, const WeakDataset& d) {
  validate_spec(s);
  if (s.input_dim != d.dim()) {
    fail("dimension mismatch: model expects ", s.input_dim, " features, data has ", d.dim());
  }
  if (d.task().is_classification()) {
    if (!s.classifies() || s.outputs != d.task().classes) {
      fail("model with ", s.outputs, " outputs cannot fit a ", d.task().classes,
           "-class classification task");
    }
  } else if (s.outputs != 1) {
    fail("regression needs a single-output model");
  }
}

void validate_config(const PgsConfig& c) {
  if (!(c.lambda >= 0.0)) fail("lambda must be >= 0");
  if (c.lower_iters < 1) fail("lower_iters must be >= 1");
  if (c.upper_iters < 0) fail("upper_iters must be >= 0");
  if (!(c.lower_step > 0.0)) fail("lower_step must be > 0");
  if (!(c.upper.lr >= 0.0)) fail("upper learning rate must be >= 0");
  if (c.cg.max_iters < 0 || !(c.cg.tol > 0.0)) fail("invalid CG settings");
}

std::string to_string(ModelFamily f) {
  switch (f) {
    case ModelFamily::LinearRegression: return "linear";
    case ModelFamily::SoftmaxRegression: return "softmax";
    case ModelFamily::TwoLayerMlp: return "mlp";
  }
  return "?";
}

std::string to_string(SafenessMode m) { return m == SafenessMode::Hinge ? "hinge" : "literal"; }

ModelFamily parse_family(const std::string& s) {
  if (s == "linear" || s == "linear_regression") return ModelFamily::LinearRegression;
  if (s == "softmax" || s == "softmax_regression" || s == "logistic") {
    return ModelFamily::SoftmaxRegression;
  }
  if (s == "mlp" || s == "two_layer_mlp") return ModelFamily::TwoLayerMlp;
  fail("unknown model family '", s, "'");
}

SafenessMode parse_safeness(const std::string& s) {
  if (s == "hinge") return SafenessMode::Hinge;
  if (s == "literal") return SafenessMode::Literal;
  fail("unknown safeness mode '", s, "'");
}

}  // namespace pgs
