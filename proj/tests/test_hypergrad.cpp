#include <doctest.h>

#include <cmath>

#include "pgs/hypergrad.hpp"
#include "pgs/model.hpp"
#include "test_util.hpp"

using namespace pgs;

namespace {

ValidationEnsemble ensemble_of(WeakDataset base, std::vector<IndexList> members, Vector c) {
  ValidationEnsemble e;
  e.base_set = std::move(base);
  e.member_indices = std::move(members);
  e.baseline_losses = std::move(c);
  return e;
}

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

struct Problem {
  ModelSpec spec;
  WeakDataset train;
  LabelQualityParams params;
  ValidationEnsemble ensemble;
};

// Small random problem with three bootstrap-like members and baselines set
// slightly below the current losses so the safeness term is active.
Problem make_problem(bool classification, std::uint64_t seed, int n = 12, int d = 3) {
  Problem p;
  p.train = classification ? testutil::random_classification(n, d, 2, seed)
                           : testutil::random_regression(n, d, seed);
  p.spec = classification ? ModelSpec::softmax_regression(d, 2, 0.1)
                          : ModelSpec::linear_regression(d, 0.1);
  p.params = testutil::random_params(p.train, seed + 1);
  const auto val = classification ? testutil::random_classification(8, d, 2, seed + 2)
                                  : testutil::random_regression(8, d, seed + 2);
  p.ensemble = ensemble_of(val, {{0, 1, 2, 3, 4}, {2, 3, 4, 5, 6}, {5, 6, 7, 0, 0}},
                           Vector::Zero(3));
  return p;
}

PgsConfig tight_config(double lambda = 1.0) {
  PgsConfig c;
  c.lambda = lambda;
  c.cg.tol = 1e-12;
  c.inner_tol = 1e-12;
  return c;
}

PipelineOptions convex_pipeline() {
  PipelineOptions o;
  o.inner = InnerSolve::Convex;
  o.convex.tol = 1e-12;
  return o;
}

}  // namespace

TEST_CASE("upper objective reference example") {
  // Member i holds one regression target sqrt(v_i); at theta = 0 its loss is v_i.
  Vector y(2);
  y << std::sqrt(0.4), std::sqrt(0.6);
  const auto base = WeakDataset::regression(Matrix::Zero(2, 1), y);
  const auto spec = ModelSpec::linear_regression(1);
  const Vector zero = Vector::Zero(2);
  auto e = ensemble_of(base, {{0}, {1}}, vec({0.5, 0.5}));
  PgsConfig c;
  c.lambda = 1.0;
  const UpperObjective u = upper_objective(spec, zero, e, c);
  CHECK(u.member_losses(0) == doctest::Approx(0.4).epsilon(1e-14));
  CHECK(u.member_losses(1) == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(u.value == doctest::Approx(0.6).epsilon(1e-14));
  CHECK(u.gaps(1) == doctest::Approx(0.1).epsilon(1e-12));

  // Every member below its baseline: the hinge vanishes, the literal form rewards.
  e.baseline_losses = vec({0.7, 0.7});
  CHECK(upper_objective(spec, zero, e, c).value == doctest::Approx(0.5));
  c.safeness_mode = SafenessMode::Literal;
  CHECK(upper_objective(spec, zero, e, c).value == doctest::Approx(0.4));

  c.lambda = 0.0;
  CHECK(upper_objective(spec, zero, e, c).value == doctest::Approx(0.5));
  e.baseline_losses = Vector();
  CHECK_THROWS_AS(upper_objective(spec, zero, e, c), Error);
}

TEST_CASE("upper gradient averages tied worst members") {
  Matrix x(2, 1);
  x << 1.0, -2.0;
  const auto base = WeakDataset::regression(x, vec({0.5, 1.5}));
  const auto spec = ModelSpec::linear_regression(1);
  const Vector th = vec({0.3, -0.1});
  const double v0 = validation_loss(spec, th, base, {0});
  const double v1 = validation_loss(spec, th, base, {1});
  const Vector g0 = validation_grad(spec, th, base, {0});
  const Vector g1 = validation_grad(spec, th, base, {1});
  PgsConfig c;
  c.lambda = 2.0;
  // Baselines chosen so both gaps equal 0.25.
  const auto e = ensemble_of(base, {{0}, {1}}, vec({v0 - 0.25, v1 - 0.25}));
  const Vector expected = 0.5 * (g0 + g1) + 2.0 * 0.5 * (g0 + g1);
  CHECK(testutil::rel_err(upper_grad_theta(spec, th, e, c), expected) < 1e-12);

  // Strict maximum: only that member enters the safeness term.
  const auto e2 = ensemble_of(base, {{0}, {1}}, vec({v0 - 0.25, v1 - 0.5}));
  CHECK(testutil::rel_err(upper_grad_theta(spec, th, e2, c), 0.5 * (g0 + g1) + 2.0 * g1) < 1e-12);
}

TEST_CASE("upper gradient matches differences away from ties") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Problem p = make_problem(seed % 2 == 0, seed);
    testutil::Rng rng(seed);
    const Vector th = testutil::random_vector(p.spec.param_count(), rng, 0.5);
    p.ensemble.baseline_losses = vec({0.1, 0.2, 0.3});
    for (auto mode : {SafenessMode::Hinge, SafenessMode::Literal}) {
      PgsConfig c = tight_config(1.5);
      c.safeness_mode = mode;
      const Vector fd = testutil::fd_gradient(
          [&](const Vector& t) { return upper_objective(p.spec, t, p.ensemble, c).value; }, th);
      CHECK(testutil::rel_err(upper_grad_theta(p.spec, th, p.ensemble, c), fd) < 1e-6);
    }
  }
}

TEST_CASE("implicit hypergradient matches the closed-form ridge derivative") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Problem p = make_problem(false, seed, 6, 1);
    p.ensemble.member_indices = {{0, 1, 2, 3, 4, 5, 6, 7}};
    p.ensemble.baseline_losses = vec({0.0});
    const PgsConfig c = tight_config(0.0);
    const int n = p.train.size();
    Matrix a(n, 2);
    a << p.train.features(), Vector::Ones(n);
    const Vector& w = p.params.w;
    const Vector t = p.train.targets() + p.params.q.col(0);
    const Matrix h = (2.0 / n) * a.transpose() * w.asDiagonal() * a + 0.1 * Matrix::Identity(2, 2);
    const Matrix hinv = h.inverse();
    const Vector theta = hinv * ((2.0 / n) * a.transpose() * w.asDiagonal() * t);
    Matrix av(8, 2);
    av << p.ensemble.base_set.features(), Vector::Ones(8);
    const Vector gf = (2.0 / 8.0) * av.transpose() * (av * theta - p.ensemble.base_set.targets());
    Vector dw(n);
    Matrix dq(n, 1);
    for (int i = 0; i < n; ++i) {
      const Vector ai = a.row(i).transpose();
      dw(i) = gf.dot(-hinv * ((2.0 / n) * ai * (ai.dot(theta) - t(i))));
      dq(i, 0) = gf.dot(hinv * ((2.0 / n) * w(i) * ai));
    }
    const HyperGrad g = hypergrad_implicit(p.spec, theta, p.train, p.params, p.ensemble, c);
    CHECK(testutil::rel_err(g.d_w, dw) < 1e-8);
    CHECK(testutil::rel_err(g.d_q, dq) < 1e-8);
  }
}

TEST_CASE("implicit hypergradient matches finite differences of the convex pipeline") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    Problem p = make_problem(seed % 2 == 1, seed);
    const PgsConfig c = tight_config(1.0);
    p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
    const Vector theta = train_convex(p.spec, p.train, p.params, convex_pipeline().convex).theta;
    const HyperGrad g = hypergrad_implicit(p.spec, theta, p.train, p.params, p.ensemble, c);
    const HyperGrad fd = hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, convex_pipeline());
    CHECK(relative_error(g, fd) < 1e-5);
  }
}

TEST_CASE("implicit hypergradient vanishes when validation is already optimal") {
  // Validation set equals the clean training set: the lower optimum also
  // minimizes the validation loss, so the upper gradient is zero.
  const auto train = testutil::random_regression(10, 2, 4);
  const auto spec = ModelSpec::linear_regression(2, 0.0);
  const auto p = identity_params(train);
  IndexList all(10);
  for (int i = 0; i < 10; ++i) all[i] = i;
  const PgsConfig c = tight_config(0.0);
  const Vector theta = train_convex(spec, train, p, convex_pipeline().convex).theta;
  const auto e = ensemble_of(train, {all}, vec({validation_loss(spec, theta, train, all)}));
  const HyperGrad g = hypergrad_implicit(spec, theta, train, p, e, c);
  CHECK(g.d_w.lpNorm<Eigen::Infinity>() < 1e-8);
  CHECK(g.d_q.lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("reverse mode with one step is a single mixed partial") {
  Problem p = make_problem(true, 3);
  const PgsConfig c = tight_config(1.0);
  p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
  testutil::Rng rng(1);
  const ModelParams th0{testutil::random_vector(p.spec.param_count(), rng)};
  const UnrollResult r = train_unrolled(p.spec, p.train, p.params, th0, 0.4, 1);
  const Vector gf = upper_grad_theta(p.spec, r.params.theta, p.ensemble, c);
  const HyperGrad g = hypergrad_reverse(p.spec, r.tape, p.train, p.params, p.ensemble, c);
  CHECK(testutil::rel_err(g.d_w, -0.4 * mixed_w_vjp(p.spec, th0.theta, p.train, p.params, gf)) <
        1e-14);
  CHECK(testutil::rel_err(g.d_q, -0.4 * mixed_q_vjp(p.spec, th0.theta, p.train, p.params, gf)) <
        1e-14);
}

TEST_CASE("reverse mode matches the geometric-series closed form") {
  // Zero features: only the bias moves. With a = (2/n) sum w + l2,
  // c = (2/n) sum w_i t_i and r = 1 - eta a, the bias after T steps is
  // b_T = r^T b_0 + (c / a) (1 - r^T). The validation loss is (b_T - s)^2.
  const int n = 5;
  const auto train = WeakDataset::regression(Matrix::Zero(n, 1), vec({0.3, -1.0, 2.0, 0.5, 1.2}));
  const auto spec = ModelSpec::linear_regression(1, 0.05);
  auto p = identity_params(train);
  p.w << 0.9, 0.3, 0.7, 1.0, 0.5;
  p.q << 0.1, -0.2, 0.0, 0.3, -0.1;
  const double s = 0.8;
  const auto val = WeakDataset::regression(Matrix::Zero(1, 1), vec({s}));
  const auto e = ensemble_of(val, {{0}}, vec({0.0}));
  const PgsConfig c = tight_config(0.0);
  const double eta = 0.3;
  const double b0 = -0.4;
  for (int steps : {1, 7, 40}) {
    const UnrollResult r = train_unrolled(spec, train, p, {vec({0.2, b0})}, eta, steps);
    const HyperGrad g = hypergrad_reverse(spec, r.tape, train, p, e, c);
    const Vector t = train.targets() + p.q.col(0);
    const double a = 2.0 / n * p.w.sum() + 0.05;
    const double cc = 2.0 / n * p.w.dot(t);
    const double rr = 1.0 - eta * a;
    const double rt = std::pow(rr, steps);
    const double bt = rt * b0 + cc / a * (1.0 - rt);
    CHECK(r.params.theta(1) == doctest::Approx(bt).epsilon(1e-12));
    const double outer = 2.0 * (bt - s);
    const double drt = steps * std::pow(rr, steps - 1) * (-eta * 2.0 / n);  // d r^T / d w_i
    Vector dw(n);
    Matrix dq(n, 1);
    for (int i = 0; i < n; ++i) {
      const double dc = 2.0 / n * t(i);
      const double da = 2.0 / n;
      const double db = drt * b0 + (dc * a - cc * da) / (a * a) * (1.0 - rt) - cc / a * drt;
      dw(i) = outer * db;
      dq(i, 0) = outer * (2.0 / n * p.w(i) / a) * (1.0 - rt);
    }
    CHECK(testutil::rel_err(g.d_w, dw) < 1e-8);
    CHECK(testutil::rel_err(g.d_q, dq) < 1e-8);
  }
}

TEST_CASE("reverse mode matches finite differences of the unrolled pipeline") {
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Problem p = make_problem(true, seed, 20, 5);
    p.spec.l2_reg = 0.01;
    const PgsConfig c = tight_config(1.0);
    p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
    PipelineOptions o;
    o.inner = InnerSolve::Unrolled;
    o.theta0 = {Vector::Zero(p.spec.param_count())};
    o.eta = 0.1;
    o.steps = 100;
    const UnrollResult r = train_unrolled(p.spec, p.train, p.params, o.theta0, o.eta, o.steps);
    const HyperGrad g = hypergrad_reverse(p.spec, r.tape, p.train, p.params, p.ensemble, c);
    const HyperGrad fd = hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, o);
    CHECK(relative_error(g, fd) < 1e-4);
  }
}

TEST_CASE("MLP reverse mode matches finite differences") {
  const auto train = testutil::random_classification(10, 3, 2, 8);
  const auto spec = ModelSpec::mlp(3, 2, 4, 0.05);
  const auto params = testutil::random_params(train, 8);
  const auto val = testutil::random_classification(6, 3, 2, 9);
  const auto e = ensemble_of(val, {{0, 1, 2}, {3, 4, 5}}, vec({0.3, 0.3}));
  const PgsConfig c = tight_config(1.0);
  PipelineOptions o;
  o.inner = InnerSolve::Unrolled;
  o.theta0 = initial_theta(spec, 2);
  o.eta = 0.2;
  o.steps = 30;
  const UnrollResult r = train_unrolled(spec, train, params, o.theta0, o.eta, o.steps);
  const HyperGrad g = hypergrad_reverse(spec, r.tape, train, params, e, c);
  CHECK(relative_error(g, hypergrad_fd(spec, train, params, e, c, o)) < 1e-5);
}

TEST_CASE("reverse mode converges to the implicit hypergradient as T grows") {
  Problem p = make_problem(false, 11);
  const PgsConfig c = tight_config(0.0);
  const double eta = 1.0 / lipschitz_bound(p.spec, p.train, p.params);
  const Vector star = train_convex(p.spec, p.train, p.params, convex_pipeline().convex).theta;
  const HyperGrad implicit = hypergrad_implicit(p.spec, star, p.train, p.params, p.ensemble, c);
  double prev = INFINITY;
  for (int steps : {10, 50, 250, 1000}) {
    const UnrollResult r = train_unrolled(p.spec, p.train, p.params,
                                          {Vector::Zero(p.spec.param_count())}, eta, steps);
    const double err = relative_error(
        hypergrad_reverse(p.spec, r.tape, p.train, p.params, p.ensemble, c), implicit);
    CHECK(err <= prev);
    prev = err;
  }
  CHECK(prev < 1e-3);
}

TEST_CASE("frozen rows receive zero hypergradient on every path") {
  Problem p = make_problem(true, 5);
  p.params.frozen[1] = true;
  p.params.frozen[4] = true;
  p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
  const PgsConfig c = tight_config(1.0);
  const Vector star = train_convex(p.spec, p.train, p.params, convex_pipeline().convex).theta;
  const UnrollResult r =
      train_unrolled(p.spec, p.train, p.params, {Vector::Zero(p.spec.param_count())}, 0.2, 20);
  const HyperGrad paths[] = {
      hypergrad_implicit(p.spec, star, p.train, p.params, p.ensemble, c),
      hypergrad_reverse(p.spec, r.tape, p.train, p.params, p.ensemble, c),
      hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, convex_pipeline())};
  for (const HyperGrad& g : paths) {
    for (int i : {1, 4}) {
      CHECK(g.d_w(i) == 0.0);
      CHECK(g.d_q.row(i).norm() == 0.0);
    }
    CHECK(g.d_w.norm() > 0.0);
  }
}

TEST_CASE("reverse tape records one adjoint per iterate") {
  Problem p = make_problem(true, 2);
  p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
  const PgsConfig c = tight_config(1.0);
  const UnrollResult r =
      train_unrolled(p.spec, p.train, p.params, {Vector::Zero(p.spec.param_count())}, 0.2, 12);
  ReverseTape rec;
  hypergrad_reverse(p.spec, r.tape, p.train, p.params, p.ensemble, c, &rec);
  CHECK(rec.alphas.size() == 13);
  CHECK(testutil::rel_err(rec.alphas[12],
                          upper_grad_theta(p.spec, r.params.theta, p.ensemble, c)) == 0.0);
  UnrollTape broken = r.tape;
  broken.theta_trajectory.pop_back();
  CHECK_THROWS_AS(hypergrad_reverse(p.spec, broken, p.train, p.params, p.ensemble, c), Error);
}

TEST_CASE("finite differences respect the coordinate budget and agree across step sizes") {
  Problem p = make_problem(false, 6);
  p.ensemble.baseline_losses = vec({0.2, 0.25, 0.3});
  const PgsConfig c = tight_config(1.0);
  FdOptions small;
  small.max_coordinates = 5;
  CHECK_THROWS_AS(hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, convex_pipeline(), small),
                  Error);
  FdOptions h1;
  h1.step = 1e-4;
  FdOptions h2;
  h2.step = 5e-5;
  const HyperGrad a = hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, convex_pipeline(), h1);
  const HyperGrad b = hypergrad_fd(p.spec, p.train, p.params, p.ensemble, c, convex_pipeline(), h2);
  CHECK(relative_error(a, b) < 1e-6);
}
