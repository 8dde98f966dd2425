#include "pgs/model.hpp"

#include <cmath>
#include <string>

namespace pgs {

namespace {

using ConstMatMap = Eigen::Map<const Matrix>;
using ConstVecMap = Eigen::Map<const Vector>;
using MatMap = Eigen::Map<Matrix>;
using VecMap = Eigen::Map<Vector>;

// Views of theta-shaped storage as the layer blocks.
template <typename MatT, typename VecT, typename Ptr>
struct LayerViews {
  MatT w1, w2;
  VecT b1, b2;

  LayerViews(const ModelSpec& s, Ptr data)
      : w1(data, has_hidden(s) ? s.hidden_units : 0, has_hidden(s) ? s.input_dim : 0),
        w2(data + hidden_block(s), s.outputs, in_width(s)),
        b1(data + w1_size(s), has_hidden(s) ? s.hidden_units : 0),
        b2(data + hidden_block(s) + s.outputs * in_width(s), s.outputs) {}

  static bool has_hidden(const ModelSpec& s) { return s.family == ModelFamily::TwoLayerMlp; }
  static int in_width(const ModelSpec& s) { return has_hidden(s) ? s.hidden_units : s.input_dim; }
  static int w1_size(const ModelSpec& s) {
    return has_hidden(s) ? s.hidden_units * s.input_dim : 0;
  }
  static int hidden_block(const ModelSpec& s) {
    return has_hidden(s) ? s.hidden_units * (s.input_dim + 1) : 0;
  }
};

using ConstLayers = LayerViews<ConstMatMap, ConstVecMap, const double*>;
using Layers = LayerViews<MatMap, VecMap, double*>;

void check_theta(const ModelSpec& spec, const Vector& theta, const Matrix& x) {
  if (theta.size() != spec.param_count()) {
    throw Error("dimension mismatch: theta has " + std::to_string(theta.size()) +
                " entries, model needs " + std::to_string(spec.param_count()));
  }
  if (x.cols() != spec.input_dim) {
    throw Error("dimension mismatch: model expects " + std::to_string(spec.input_dim) +
                " features, got " + std::to_string(x.cols()));
  }
}

struct Forward {
  Matrix hidden;  // tanh activations, n x h (MLP only)
  Matrix out;     // n x outputs
};

Forward forward(const ModelSpec& spec, const Vector& theta, const Matrix& x) {
  check_theta(spec, theta, x);
  const ConstLayers l(spec, theta.data());
  Forward f;
  if (ConstLayers::has_hidden(spec)) {
    f.hidden = ((x * l.w1.transpose()).rowwise() + l.b1.transpose()).array().tanh().matrix();
    f.out = (f.hidden * l.w2.transpose()).rowwise() + l.b2.transpose();
  } else {
    f.out = (x * l.w2.transpose()).rowwise() + l.b2.transpose();
  }
  return f;
}

Matrix softmax_rows(const Matrix& z) {
  Matrix p(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    const double shift = z.row(i).maxCoeff();
    p.row(i) = (z.row(i).array() - shift).exp().matrix();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

double log_sum_exp(const RowVector& z) {
  const double shift = z.maxCoeff();
  return shift + std::log((z.array() - shift).exp().sum());
}

// d loss_i / d out_i, one row per instance, scaled by weight_i.
Matrix output_grad(LossKind kind, const Matrix& out, const WeightedTargets& t) {
  Matrix g;
  if (kind == LossKind::CrossEntropy) {
    const Matrix p = softmax_rows(out);
    const Vector mass = t.target.rowwise().sum();
    g = (p.array().colwise() * mass.array()).matrix() - t.target;
  } else {
    g = 2.0 * (out - t.target);
  }
  return (g.array().colwise() * t.weight.array()).matrix();
}

// (d^2 loss_i / d out_i^2) r_i, scaled by weight_i.
Matrix output_hess(LossKind kind, const Matrix& out, const WeightedTargets& t, const Matrix& r) {
  Matrix h;
  if (kind == LossKind::CrossEntropy) {
    const Matrix p = softmax_rows(out);
    const Vector mass = t.target.rowwise().sum();
    const Vector pr = (p.array() * r.array()).rowwise().sum();
    h = p.array() * (r.array().colwise() - pr.array());
    h = (h.array().colwise() * mass.array()).matrix();
  } else {
    h = 2.0 * r;
  }
  return (h.array().colwise() * t.weight.array()).matrix();
}

// Reverse pass: gradient of sum_i <g_out_i, out_i> in theta.
Vector backprop(const ModelSpec& spec, const Vector& theta, const Matrix& x, const Forward& f,
                const Matrix& g_out) {
  const ConstLayers l(spec, theta.data());
  Vector grad = Vector::Zero(theta.size());
  Layers gl(spec, grad.data());
  if (ConstLayers::has_hidden(spec)) {
    gl.w2 = g_out.transpose() * f.hidden;
    gl.b2 = g_out.colwise().sum().transpose();
    const Matrix g_pre =
        ((g_out * l.w2).array() * (1.0 - f.hidden.array().square())).matrix();
    gl.w1 = g_pre.transpose() * x;
    gl.b1 = g_pre.colwise().sum().transpose();
  } else {
    gl.w2 = g_out.transpose() * x;
    gl.b2 = g_out.colwise().sum().transpose();
  }
  return grad;
}

struct Directional {
  Matrix hidden;  // R{h}
  Matrix out;     // R{out} = J v
};

// Forward-mode directional derivative of the network along v.
Directional r_forward(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                      const Forward& f, const Vector& v) {
  const ConstLayers l(spec, theta.data());
  const ConstLayers vl(spec, v.data());
  Directional r;
  if (ConstLayers::has_hidden(spec)) {
    const Matrix r_pre = (x * vl.w1.transpose()).rowwise() + vl.b1.transpose();
    r.hidden = (r_pre.array() * (1.0 - f.hidden.array().square())).matrix();
    r.out = (f.hidden * vl.w2.transpose() + r.hidden * l.w2.transpose()).rowwise() +
            vl.b2.transpose();
  } else {
    r.out = (x * vl.w2.transpose()).rowwise() + vl.b2.transpose();
  }
  return r;
}

}  // namespace

LossKind loss_kind(const ModelSpec& spec) {
  return spec.classifies() ? LossKind::CrossEntropy : LossKind::SquaredError;
}

WeightedTargets train_targets(const WeakDataset& d, const LabelQualityParams& p) {
  const int n = d.size();
  if (p.w.size() != n || p.q.rows() != n || p.q.cols() != d.task().q_width()) {
    throw Error("dimension mismatch between dataset and label-quality params");
  }
  WeightedTargets t;
  t.weight = p.w / static_cast<double>(n);
  if (d.task().is_classification()) {
    t.target = p.q;
  } else {
    t.target = d.targets() + p.q.col(0);
  }
  return t;
}

WeightedTargets member_targets(const WeakDataset& base, const IndexList& member) {
  const int nv = base.size();
  if (member.empty()) throw Error("empty validation member");
  WeightedTargets t;
  t.weight = Vector::Zero(nv);
  const double unit = 1.0 / static_cast<double>(member.size());
  for (int i : member) {
    if (i < 0 || i >= nv) throw Error("validation member index out of range: " + std::to_string(i));
    t.weight(i) += unit;
  }
  if (base.task().is_classification()) {
    t.target = Matrix::Zero(nv, base.task().classes);
    for (int i = 0; i < nv; ++i) t.target(i, base.classes()[i]) = 1.0;
  } else {
    t.target = base.targets();
  }
  return t;
}

Matrix outputs(const ModelSpec& spec, const Vector& theta, const Matrix& x) {
  return forward(spec, theta, x).out;
}

Matrix predict(const ModelSpec& spec, const Vector& theta, const Matrix& x) {
  Forward f = forward(spec, theta, x);
  if (loss_kind(spec) == LossKind::CrossEntropy) return softmax_rows(f.out);
  return f.out;
}

double per_class_loss(const ModelSpec& spec, const Vector& theta, const RowVector& x, int j) {
  if (loss_kind(spec) != LossKind::CrossEntropy) throw Error("per_class_loss needs a classifier");
  if (j < 0 || j >= spec.outputs) throw Error("class index out of range");
  const Matrix xm = x;
  const RowVector z = forward(spec, theta, xm).out.row(0);
  return log_sum_exp(z) - z(j);
}

Matrix per_class_losses(const ModelSpec& spec, const Vector& theta, const Matrix& x) {
  if (loss_kind(spec) != LossKind::CrossEntropy) throw Error("per_class_losses needs a classifier");
  const Matrix z = forward(spec, theta, x).out;
  Matrix out(z.rows(), z.cols());
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    out.row(i) = (log_sum_exp(z.row(i)) - z.row(i).array()).matrix();
  }
  return out;
}

double objective(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                 const WeightedTargets& t, double l2) {
  const Matrix z = forward(spec, theta, x).out;
  double sum = 0.0;
  if (loss_kind(spec) == LossKind::CrossEntropy) {
    for (Eigen::Index i = 0; i < z.rows(); ++i) {
      if (t.weight(i) == 0.0) continue;
      const double lse = log_sum_exp(z.row(i));
      sum += t.weight(i) * (t.target.row(i).sum() * lse - t.target.row(i).dot(z.row(i)));
    }
  } else {
    sum = t.weight.dot((z - t.target).rowwise().squaredNorm());
  }
  return sum + 0.5 * l2 * theta.squaredNorm();
}

Vector objective_grad(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                      const WeightedTargets& t, double l2) {
  const Forward f = forward(spec, theta, x);
  const Matrix g = output_grad(loss_kind(spec), f.out, t);
  return backprop(spec, theta, x, f, g) + l2 * theta;
}

Vector objective_hvp(const ModelSpec& spec, const Vector& theta, const Matrix& x,
                     const WeightedTargets& t, double l2, const Vector& v) {
  if (v.size() != theta.size()) throw Error("dimension mismatch: hvp direction");
  const LossKind kind = loss_kind(spec);
  const Forward f = forward(spec, theta, x);
  const Directional r = r_forward(spec, theta, x, f, v);
  const Matrix r_g = output_hess(kind, f.out, t, r.out);
  Vector hv = backprop(spec, theta, x, f, r_g);
  if (ConstLayers::has_hidden(spec)) {
    // Second-order terms of the hidden layer: the output gradient flowing
    // through the perturbed W2 and tanh curvature.
    const ConstLayers l(spec, theta.data());
    const ConstLayers vl(spec, v.data());
    const Matrix g = output_grad(kind, f.out, t);
    Layers hl(spec, hv.data());
    hl.w2 += g.transpose() * r.hidden;
    const Matrix g_hidden = g * l.w2;
    const Matrix extra =
        ((g * vl.w2).array() * (1.0 - f.hidden.array().square()) -
         2.0 * g_hidden.array() * f.hidden.array() * r.hidden.array())
            .matrix();
    hl.w1 += extra.transpose() * x;
    hl.b1 += extra.colwise().sum().transpose();
  }
  return hv + l2 * v;
}

double weighted_train_loss(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                           const LabelQualityParams& p) {
  return objective(spec, theta, d.features(), train_targets(d, p), spec.l2_reg);
}

Vector grad_theta(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                  const LabelQualityParams& p) {
  return objective_grad(spec, theta, d.features(), train_targets(d, p), spec.l2_reg);
}

Vector hvp_theta(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                 const LabelQualityParams& p, const Vector& v) {
  return objective_hvp(spec, theta, d.features(), train_targets(d, p), spec.l2_reg, v);
}

Vector mixed_w_vjp(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                   const LabelQualityParams& p, const Vector& v) {
  if (v.size() != theta.size()) throw Error("dimension mismatch: vjp direction");
  const int n = d.size();
  WeightedTargets t = train_targets(d, p);
  t.weight = Vector::Constant(n, 1.0 / n);
  const Forward f = forward(spec, theta, d.features());
  const Directional r = r_forward(spec, theta, d.features(), f, v);
  const Matrix g = output_grad(loss_kind(spec), f.out, t);
  return (g.array() * r.out.array()).rowwise().sum().matrix();
}

Matrix mixed_q_vjp(const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
                   const LabelQualityParams& p, const Vector& v) {
  if (v.size() != theta.size()) throw Error("dimension mismatch: vjp direction");
  const WeightedTargets t = train_targets(d, p);
  const Forward f = forward(spec, theta, d.features());
  const Directional r = r_forward(spec, theta, d.features(), f, v);
  if (loss_kind(spec) == LossKind::CrossEntropy) {
    // d/dQ_ij of w_i/n (sum_j Q_ij p - Q_i) . Jv = w_i/n (p . Jv - (Jv)_j)
    const Matrix prob = softmax_rows(f.out);
    const Vector pr = (prob.array() * r.out.array()).rowwise().sum();
    Matrix out = (-r.out).colwise() + pr;
    return (out.array().colwise() * t.weight.array()).matrix();
  }
  // Regression: d/dQ_i of w_i/n * 2 (f - y - Q_i) Jv = -2 w_i/n Jv.
  Matrix out = -2.0 * r.out;
  return (out.array().colwise() * t.weight.array()).matrix();
}

double validation_loss(const ModelSpec& spec, const Vector& theta, const WeakDataset& base,
                       const IndexList& member) {
  return objective(spec, theta, base.features(), member_targets(base, member), 0.0);
}

Vector validation_grad(const ModelSpec& spec, const Vector& theta, const WeakDataset& base,
                       const IndexList& member) {
  return objective_grad(spec, theta, base.features(), member_targets(base, member), 0.0);
}

}  // namespace pgs
