#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "pgs/experiment.hpp"
#include "test_util.hpp"

using namespace pgs;
namespace fs = std::filesystem;

namespace {

Protocol small_protocol() {
  Protocol p;
  p.name = "small";
  p.data.dim = 3;
  p.data.separation = 2.0;
  p.data.problem_seed = 3;
  p.split = {60, 20, 0, 100};
  p.noise.kind = "flip";
  p.noise.ratio = 0.3;
  p.members = 2;
  p.model.family = "softmax";
  p.model.l2 = 1e-3;
  p.pgs.upper_iters = 3;
  p.pgs.upper.lr = 0.05;
  p.methods = {"baseline", "validation_only", "pgs_convex"};
  p.seeds = {0, 1};
  return p;
}

Json fixture(const std::string& name) {
  return Json::parse(read_text(fs::path(PGS_FIXTURE_DIR) / name));
}

}  // namespace

TEST_CASE("protocol JSON round trip and strict keys") {
  Protocol p = small_protocol();
  p.eps1 = 12.0;
  const Json j = protocol_to_json(p);
  CHECK(canonical(protocol_to_json(protocol_from_json(j))) == canonical(j));

  Json bad = j;
  bad["pgs"]["lamda"] = 1.0;
  CHECK_THROWS_WITH_AS(protocol_from_json(bad), "config: unknown key 'pgs.lamda'", Error);
  Json bad_kind = j;
  bad_kind["noise"]["kind"] = "salt";
  CHECK_THROWS_AS(protocol_from_json(bad_kind), Error);
}

TEST_CASE("dotted overrides") {
  Json j = protocol_to_json(small_protocol());
  apply_override(j, "pgs.lambda", "0.25");
  apply_override(j, "model.family", "mlp");
  apply_override(j, "seeds", "[5]");
  const Protocol p = protocol_from_json(j);
  CHECK(p.pgs.lambda == 0.25);
  CHECK(p.model.family == "mlp");
  CHECK(p.seeds == std::vector<std::uint64_t>{5});
  CHECK_THROWS_AS(apply_override(j, "", "1"), Error);
}

TEST_CASE("experiments are deterministic across thread counts") {
  Protocol p = small_protocol();
  p.threads = 1;
  const auto a = run_experiment(p);
  p.threads = 2;
  const auto b = run_experiment(p);
  REQUIRE(a.size() == 6);
  REQUIRE(b.size() == 6);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(canonical(report_to_json(a[i])) == canonical(report_to_json(b[i])));
  }
  CHECK(a[0].method == "baseline");
  CHECK(a[2].method == "pgs_convex");
  CHECK(a[3].seed == 1);
}

TEST_CASE("the config echo reproduces a run") {
  const Protocol p = small_protocol();
  const auto reports = run_experiment(p);
  const RunReport& r = reports[2];
  const Protocol again = protocol_from_json(Json::parse(r.config_echo));
  CHECK(again.methods == std::vector<std::string>{"pgs_convex"});
  CHECK(again.seeds == std::vector<std::uint64_t>{0});
  const auto rerun = run_experiment(again);
  REQUIRE(rerun.size() == 1);
  CHECK(canonical(report_to_json(rerun[0])) == canonical(report_to_json(r)));
}

TEST_CASE("empty seed list and unknown methods") {
  Protocol p = small_protocol();
  p.seeds = {};
  CHECK(run_experiment(p).empty());
  p.seeds = {0};
  p.methods = {"magic"};
  CHECK_THROWS_AS(run_experiment(p), Error);
}

TEST_CASE("aggregation recomputes mean and sample standard deviation") {
  const auto reports = run_experiment(small_protocol());
  const auto rows = aggregate(reports, "g");
  bool seen = false;
  for (const auto& row : rows) {
    if (row.method != "baseline" || row.metric != "accuracy") continue;
    seen = true;
    const double x0 = reports[0].test_metrics.at("accuracy");
    const double x1 = reports[3].test_metrics.at("accuracy");
    CHECK(row.count == 2);
    CHECK(row.mean == doctest::Approx(0.5 * (x0 + x1)));
    CHECK(row.std == doctest::Approx(std::abs(x0 - x1) / std::sqrt(2.0)));
  }
  CHECK(seen);
  std::vector<RunReport> one = {reports[0]};
  for (const auto& row : aggregate(one, "g")) CHECK(row.std == 0.0);
  CHECK(aggregate_csv(rows).rfind("group,method,metric,count,mean,std\n", 0) == 0);
  bool safe_row = false;
  for (const auto& row : rows) safe_row |= row.method == "pgs_convex" && row.metric == "safe_runs";
  CHECK(safe_row);
}

TEST_CASE("sweep cells") {
  const Protocol p = small_protocol();
  const auto cells = sweep_cells(p, "validation_size", {"20", "40"});
  REQUIRE(cells.size() == 2);
  CHECK(cells[1].protocol.split.val == 40);
  CHECK(cells[0].label == "n_v=20");
  const auto it = sweep_cells(p, "iterations", {"50x4"});
  CHECK(it[0].protocol.pgs.lower_iters == 50);
  CHECK(it[0].protocol.pgs.upper_iters == 4);
  CHECK_THROWS_AS(sweep_cells(p, "iterations", {"50"}), Error);
  CHECK_THROWS_AS(sweep_cells(p, "depth", {"1"}), Error);

  // A one-cell sweep equals aggregating the experiment directly.
  Protocol q = p;
  q.seeds = {0};
  const auto swept = sweep(q, "validation_size", {"20"});
  const auto direct = aggregate(run_experiment(q), "n_v=20");
  CHECK(aggregate_csv(swept) == aggregate_csv(direct));
}

TEST_CASE("reports written to disk load back sorted") {
  Protocol p = small_protocol();
  p.seeds = {0};
  const auto reports = run_experiment(p);
  const fs::path out = fs::temp_directory_path() / "pgs_test_experiment";
  fs::remove_all(out);
  const auto dirs = write_reports(out, reports);
  CHECK(dirs.size() == reports.size());
  const auto loaded = load_reports(out);
  REQUIRE(loaded.size() == reports.size());
  for (const auto& r : loaded) {
    bool match = false;
    for (const auto& s : reports) {
      match |= canonical(report_to_json(r)) == canonical(report_to_json(s));
    }
    CHECK(match);
  }
}

TEST_CASE("stored gradcheck fixtures match the analytic hypergradients") {
  for (const char* name :
       {"gradcheck_linear.json", "gradcheck_softmax.json", "gradcheck_mlp.json"}) {
    const Json j = fixture(name);
    const Json& c = j.at("case");
    GradcheckOptions o;
    o.family = c.at("family");
    o.n = c.at("n");
    o.dim = c.at("dim");
    o.classes = c.at("classes");
    o.hidden = c.at("hidden");
    o.l2 = c.at("l2");
    o.members = c.at("members");
    o.val_size = c.at("val_size");
    const GradcheckCase gc = make_gradcheck_case(o, j.at("seed").get<std::uint64_t>());
    const GradcheckResult r = run_gradcheck(gc, j.at("steps").get<int>());
    HyperGrad stored;
    const auto w = j.at("fd").at("d_w").get<std::vector<double>>();
    stored.d_w = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
    const auto q = j.at("fd").at("d_q").get<std::vector<std::vector<double>>>();
    stored.d_q.resize(static_cast<Eigen::Index>(q.size()), static_cast<Eigen::Index>(q[0].size()));
    for (std::size_t i = 0; i < q.size(); ++i) {
      for (std::size_t k = 0; k < q[i].size(); ++k) stored.d_q(i, k) = q[i][k];
    }
    INFO(name);
    CHECK(relative_error(r.fd, stored) < 1e-8);
    CHECK(r.reverse_vs_fd < 1e-6);
    if (o.family != "mlp") CHECK(r.implicit_vs_fd < 1e-6);
  }
}
