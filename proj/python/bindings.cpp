#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "pgs/experiment.hpp"
#include "pgs/harness.hpp"
#include "pgs/hypergrad.hpp"
#include "pgs/lower_solver.hpp"
#include "pgs/model.hpp"
#include "pgs/oracle.hpp"
#include "pgs/pgs.hpp"
#include "pgs/projection.hpp"

namespace py = pybind11;
using namespace pgs;

namespace {

py::dict hypergrad_dict(const HyperGrad& g) {
  py::dict d;
  d["d_w"] = g.d_w;
  d["d_q"] = g.d_q;
  d["path"] = to_string(g.path);
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Bi-level label-quality optimization (C++ core)";
  py::register_exception<Error>(m, "Error", PyExc_ValueError);

  py::enum_<ModelFamily>(m, "ModelFamily")
      .value("LinearRegression", ModelFamily::LinearRegression)
      .value("SoftmaxRegression", ModelFamily::SoftmaxRegression)
      .value("TwoLayerMlp", ModelFamily::TwoLayerMlp);
  py::enum_<SafenessMode>(m, "SafenessMode")
      .value("Hinge", SafenessMode::Hinge)
      .value("Literal", SafenessMode::Literal);
  py::enum_<WslMode>(m, "WslMode")
      .value("LabelNoise", WslMode::LabelNoise)
      .value("SemiSupervised", WslMode::SemiSupervised);

  py::class_<ModelSpec>(m, "ModelSpec")
      .def_static("linear_regression", &ModelSpec::linear_regression, py::arg("d"),
                  py::arg("l2_reg") = 1e-4)
      .def_static("softmax_regression", &ModelSpec::softmax_regression, py::arg("d"),
                  py::arg("k"), py::arg("l2_reg") = 1e-4)
      .def_static("mlp", &ModelSpec::mlp, py::arg("d"), py::arg("outputs"), py::arg("hidden"),
                  py::arg("l2_reg") = 0.0)
      .def_readonly("family", &ModelSpec::family)
      .def_readonly("input_dim", &ModelSpec::input_dim)
      .def_readonly("outputs", &ModelSpec::outputs)
      .def_readonly("hidden_units", &ModelSpec::hidden_units)
      .def_readonly("l2_reg", &ModelSpec::l2_reg)
      .def_property_readonly("param_count", &ModelSpec::param_count);

  py::class_<WeakDataset>(m, "WeakDataset")
      .def_static(
          "classification",
          [](const Matrix& x, const std::vector<int>& y, int k, const Mask& labeled) {
            WeakDataset d = WeakDataset::classification(x, y, k, labeled);
            validate_dataset(d);
            return d;
          },
          py::arg("features"), py::arg("labels"), py::arg("k"), py::arg("labeled") = Mask{})
      .def_static(
          "regression",
          [](const Matrix& x, const Vector& y, const Mask& labeled) {
            WeakDataset d = WeakDataset::regression(x, y, labeled);
            validate_dataset(d);
            return d;
          },
          py::arg("features"), py::arg("labels"), py::arg("labeled") = Mask{})
      .def_property_readonly("size", &WeakDataset::size)
      .def_property_readonly("dim", &WeakDataset::dim)
      .def_property_readonly("features", &WeakDataset::features)
      .def_property_readonly("classes", &WeakDataset::classes)
      .def_property_readonly("targets", &WeakDataset::targets)
      .def_property_readonly("labeled_mask", &WeakDataset::labeled_mask)
      .def("__len__", &WeakDataset::size);

  py::class_<LabelQualityParams>(m, "LabelQualityParams")
      .def(py::init<>())
      .def_readwrite("w", &LabelQualityParams::w)
      .def_readwrite("q", &LabelQualityParams::q)
      .def_readwrite("frozen", &LabelQualityParams::frozen);

  py::class_<FeasibleRegion>(m, "FeasibleRegion")
      .def(py::init([](double eps1, double eps2) { return FeasibleRegion{eps1, eps2}; }),
           py::arg("eps1"), py::arg("eps2"))
      .def_readwrite("eps1", &FeasibleRegion::eps1)
      .def_readwrite("eps2", &FeasibleRegion::eps2);

  py::class_<PgsConfig>(m, "PgsConfig")
      .def(py::init<>())
      .def_readwrite("lambda_", &PgsConfig::lambda)
      .def_readwrite("safeness_mode", &PgsConfig::safeness_mode)
      .def_readwrite("lower_iters", &PgsConfig::lower_iters)
      .def_readwrite("upper_iters", &PgsConfig::upper_iters)
      .def_readwrite("lower_step", &PgsConfig::lower_step)
      .def_readwrite("seed", &PgsConfig::seed)
      .def_property(
          "upper_lr", [](const PgsConfig& c) { return c.upper.lr; },
          [](PgsConfig& c, double lr) { c.upper.lr = lr; });

  py::class_<ValidationEnsemble>(m, "ValidationEnsemble")
      .def_readonly("member_indices", &ValidationEnsemble::member_indices)
      .def_readonly("baseline_losses", &ValidationEnsemble::baseline_losses)
      .def_property_readonly("members", &ValidationEnsemble::members);

  py::class_<RunReport>(m, "RunReport")
      .def_readonly("method", &RunReport::method)
      .def_readonly("seed", &RunReport::seed)
      .def_property_readonly("w", [](const RunReport& r) { return r.params.w; })
      .def_property_readonly("q", [](const RunReport& r) { return r.params.q; })
      .def_property_readonly("theta", [](const RunReport& r) { return r.theta.theta; })
      .def_readonly("baseline_losses", &RunReport::baseline_losses)
      .def_readonly("val_losses_after", &RunReport::val_losses_after)
      .def_readonly("gaps_after", &RunReport::gaps_after)
      .def_readonly("unsafe", &RunReport::unsafe)
      .def_readonly("objective_trace", &RunReport::objective_trace)
      .def_readonly("test_metrics", &RunReport::test_metrics)
      .def_readonly("baseline_metrics", &RunReport::baseline_metrics)
      .def("to_json", [](const RunReport& r) { return canonical(report_to_json(r)); });

  m.def("identity_params", &identity_params, py::arg("data"),
        py::arg("mode") = WslMode::LabelNoise);
  m.def("initial_params", &initial_params, py::arg("data"), py::arg("mode"));
  m.def("default_region", &default_region, py::arg("data"), py::arg("params"));

  m.def(
      "project_w",
      [](const Vector& w, double eps1, Mask frozen) {
        if (frozen.empty()) frozen.assign(w.size(), false);
        return project_w(w, eps1, frozen);
      },
      py::arg("w"), py::arg("eps1"), py::arg("frozen") = Mask{});
  m.def("project_simplex", &project_simplex, py::arg("row"));
  m.def(
      "project_q_classification",
      [](const Matrix& q, const std::vector<int>& labels, double eps2, Mask frozen,
         const Mask& capped) {
        if (frozen.empty()) frozen.assign(q.rows(), false);
        return project_q_classification(q, labels, eps2, frozen, capped);
      },
      py::arg("q"), py::arg("labels"), py::arg("eps2"), py::arg("frozen") = Mask{},
      py::arg("capped") = Mask{});
  m.def(
      "project_q_regression",
      [](const Vector& q, double eps2, Mask frozen, const Mask& capped) {
        if (frozen.empty()) frozen.assign(q.size(), false);
        return project_q_regression(q, eps2, frozen, capped);
      },
      py::arg("q"), py::arg("eps2"), py::arg("frozen") = Mask{}, py::arg("capped") = Mask{});
  m.def("project", &project, py::arg("params"), py::arg("data"), py::arg("region"));

  m.def("predict", &predict, py::arg("spec"), py::arg("theta"), py::arg("features"));
  m.def("weighted_train_loss", &weighted_train_loss, py::arg("spec"), py::arg("theta"),
        py::arg("data"), py::arg("params"));
  m.def("grad_theta", &grad_theta, py::arg("spec"), py::arg("theta"), py::arg("data"),
        py::arg("params"));
  m.def("hvp_theta", &hvp_theta, py::arg("spec"), py::arg("theta"), py::arg("data"),
        py::arg("params"), py::arg("v"));
  m.def(
      "train_convex",
      [](const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p) {
        return train_convex(spec, d, p).theta;
      },
      py::arg("spec"), py::arg("data"), py::arg("params"));
  m.def(
      "train_unrolled",
      [](const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
         const Vector& theta0, double eta, int steps) {
        return train_unrolled(spec, d, p, ModelParams{theta0}, eta, steps).params.theta;
      },
      py::arg("spec"), py::arg("data"), py::arg("params"), py::arg("theta0"), py::arg("eta"),
      py::arg("steps"));

  m.def("make_ensemble", &make_ensemble, py::arg("val"), py::arg("m"), py::arg("seed"));
  m.def(
      "compute_baseline",
      [](const ModelSpec& spec, const WeakDataset& d, const ValidationEnsemble& e,
         const PgsConfig& cfg, WslMode mode) {
        const auto inner = spec.is_convex() ? InnerSolve::Convex : InnerSolve::Unrolled;
        BaselineResult r = compute_baseline(spec, d, e, cfg, inner, mode);
        return py::make_tuple(r.theta0.theta, r.ensemble);
      },
      py::arg("spec"), py::arg("data"), py::arg("ensemble"), py::arg("config"),
      py::arg("mode") = WslMode::LabelNoise);
  m.def(
      "hypergrad_implicit",
      [](const ModelSpec& spec, const Vector& theta, const WeakDataset& d,
         const LabelQualityParams& p, const ValidationEnsemble& e, const PgsConfig& cfg) {
        return hypergrad_dict(hypergrad_implicit(spec, theta, d, p, e, cfg));
      },
      py::arg("spec"), py::arg("theta"), py::arg("data"), py::arg("params"), py::arg("ensemble"),
      py::arg("config"));
  m.def("pgs_convex", &pgs_convex, py::arg("spec"), py::arg("data"), py::arg("ensemble"),
        py::arg("config"), py::arg("region"), py::arg("mode") = WslMode::LabelNoise,
        py::call_guard<py::gil_scoped_release>());
  m.def("pgs_nonconvex", &pgs_nonconvex, py::arg("spec"), py::arg("data"), py::arg("ensemble"),
        py::arg("config"), py::arg("region"), py::arg("mode") = WslMode::LabelNoise,
        py::call_guard<py::gil_scoped_release>());

  m.def(
      "inject_uniform_flip",
      [](const WeakDataset& d, double ratio, std::uint64_t seed) {
        Injected r = inject_uniform_flip(d, ratio, seed);
        return py::make_tuple(r.data, r.truth.corruption_mask);
      },
      py::arg("data"), py::arg("ratio"), py::arg("seed"));
  m.def(
      "gaussian_mixture",
      [](int n, int dim, int classes, double separation, std::uint64_t problem_seed,
         std::uint64_t sample_seed) {
        return gaussian_mixture({n, dim, classes, separation}, problem_seed, sample_seed);
      },
      py::arg("n"), py::arg("dim"), py::arg("classes") = 2, py::arg("separation") = 2.0,
      py::arg("problem_seed") = 0, py::arg("sample_seed") = 0);
  m.def(
      "accuracy",
      [](const ModelSpec& spec, const Vector& theta, const WeakDataset& test) {
        return evaluate(spec, theta, test, MetricKind::Accuracy).value;
      },
      py::arg("spec"), py::arg("theta"), py::arg("test"));
  m.def(
      "mse",
      [](const ModelSpec& spec, const Vector& theta, const WeakDataset& test) {
        return evaluate(spec, theta, test, MetricKind::MeanSquaredError).value;
      },
      py::arg("spec"), py::arg("theta"), py::arg("test"));

  m.def(
      "run_protocol",
      [](const std::string& config_json) {
        const Protocol p = protocol_from_json(Json::parse(config_json));
        std::vector<RunReport> reports;
        {
          py::gil_scoped_release release;
          reports = run_experiment(p);
        }
        return reports;
      },
      py::arg("config_json"), "Runs a protocol given as JSON text; returns the run reports.");
  m.def(
      "gradcheck",
      [](const std::string& family, std::uint64_t seed, int steps) {
        GradcheckOptions o;
        o.family = family;
        if (parse_family(family) == ModelFamily::LinearRegression) o.classes = 1;
        const GradcheckResult r = run_gradcheck(make_gradcheck_case(o, seed), steps);
        py::dict d;
        d["implicit_vs_fd"] = r.implicit_vs_fd;
        d["reverse_vs_fd"] = r.reverse_vs_fd;
        d["implicit_vs_reverse"] = r.implicit_vs_reverse;
        return d;
      },
      py::arg("family") = "softmax", py::arg("seed") = 0, py::arg("steps") = 1000);
  m.def(
      "project_check",
      [](int cases, std::uint64_t seed) {
        const auto st = oracle::project_check(cases, seed);
        py::dict d;
        d["cases"] = st.cases;
        d["max_gap_w"] = st.max_gap_w;
        d["max_gap_ball"] = st.max_gap_ball;
        d["max_infeasibility"] = st.max_infeasibility;
        d["classification_within"] = st.classification_within;
        d["worst_ratio"] = st.worst_ratio;
        return d;
      },
      py::arg("cases") = 100, py::arg("seed") = 0);
}
