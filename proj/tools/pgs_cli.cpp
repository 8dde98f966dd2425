// pgs: run experiments, check hypergradients and projections, aggregate reports.
//
// Exit codes: 0 success, 1 error, 2 a run was flagged unsafe.

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pgs/experiment.hpp"
#include "pgs/hypergrad.hpp"
#include "pgs/io.hpp"
#include "pgs/oracle.hpp"

namespace fs = std::filesystem;
using namespace pgs;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitError = 1;
constexpr int kExitUnsafe = 2;

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;
  long long seed = -1;
  int threads = -1;
};

void add_config_args(CLI::App* cmd, ConfigArgs& a) {
  cmd->add_option("-c,--config", a.path, "Protocol JSON file")->required()->envname("PGS_CONFIG");
  cmd->add_option("--set", a.overrides, "Override a dotted config path, e.g. pgs.upper.lr=0.05");
  cmd->add_option("--seed", a.seed, "Run a single seed instead of the configured list")
      ->envname("PGS_SEED");
  cmd->add_option("--threads", a.threads, "Parallel runs (0 = logical cores)")
      ->envname("PGS_THREADS");
}

Protocol resolve_protocol(const ConfigArgs& a) {
  if (!fs::exists(a.path)) throw Error("config file not found: " + a.path);
  Json j;
  try {
    j = Json::parse(read_text(a.path));
  } catch (const Json::exception& e) {
    throw Error("config " + a.path + ": " + e.what());
  }
  for (const auto& o : a.overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw Error("--set expects path=value, got '" + o + "'");
    apply_override(j, o.substr(0, eq), o.substr(eq + 1));
  }
  // Data paths are relative to the config file.
  if (j.contains("data") && j["data"].is_object()) {
    for (const char* key : {"path", "images", "labels"}) {
      if (!j["data"].contains(key) || !j["data"][key].is_string()) continue;
      const fs::path value = j["data"][key].get<std::string>();
      if (value.empty() || value.is_absolute()) continue;
      j["data"][key] = fs::weakly_canonical(fs::absolute(a.path).parent_path() / value).string();
    }
  }
  if (a.seed >= 0) j["seeds"] = Json::array({static_cast<std::uint64_t>(a.seed)});
  if (a.threads >= 0) j["threads"] = a.threads;
  return protocol_from_json(j);
}

std::string group_name(const RunReport& r) {
  if (r.config_echo.empty()) return "-";
  const Json j = Json::parse(r.config_echo);
  return j.value("name", std::string("-"));
}

int cmd_run(const ConfigArgs& a, const std::string& out, bool fail_on_unsafe) {
  const Protocol p = resolve_protocol(a);
  const auto reports = run_experiment(p);
  const auto dirs = write_reports(out, reports);
  bool unsafe = false;
  for (std::size_t i = 0; i < reports.size(); ++i) {
    const auto& r = reports[i];
    std::cout << r.method << " seed=" << r.seed;
    for (const auto& [k, v] : r.test_metrics) std::cout << " " << k << "=" << v;
    if (r.unsafe) std::cout << " UNSAFE";
    std::cout << "  -> " << dirs[i].string() << "\n";
    unsafe = unsafe || r.unsafe;
  }
  const auto rows = aggregate(reports, p.name);
  std::cout << "\n" << aggregate_table(rows);
  fs::create_directories(out);
  write_text(fs::path(out) / "summary.csv", aggregate_csv(rows));
  return unsafe && fail_on_unsafe ? kExitUnsafe : kExitOk;
}

struct GradcheckArgs {
  std::string config;
  std::string family = "softmax";
  int cases = 10;
  long long seed = 0;
  int steps = 1000;
  double threshold = 1e-3;
  std::vector<std::string> fixtures;
  std::string emit;
};

HyperGrad fixture_grad(const Json& j) {
  HyperGrad g;
  g.path = HyperGradPath::FiniteDiff;
  const auto w = j.at("d_w").get<std::vector<double>>();
  g.d_w = Eigen::Map<const Vector>(w.data(), static_cast<Eigen::Index>(w.size()));
  const auto q = j.at("d_q").get<std::vector<std::vector<double>>>();
  g.d_q.resize(static_cast<Eigen::Index>(q.size()), q.empty() ? 0 : static_cast<Eigen::Index>(q[0].size()));
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (std::size_t k = 0; k < q[i].size(); ++k) g.d_q(i, k) = q[i][k];
  }
  return g;
}

Json case_json(const GradcheckOptions& o) {
  return {{"family", o.family}, {"n", o.n},           {"dim", o.dim},
          {"classes", o.classes}, {"hidden", o.hidden}, {"l2", o.l2},
          {"members", o.members}, {"val_size", o.val_size},
          {"safeness", to_string(o.safeness)}};
}

GradcheckOptions case_from_json(const Json& j) {
  GradcheckOptions o;
  o.family = j.value("family", o.family);
  o.n = j.value("n", o.n);
  o.dim = j.value("dim", o.dim);
  o.classes = j.value("classes", o.classes);
  o.hidden = j.value("hidden", o.hidden);
  o.l2 = j.value("l2", o.l2);
  o.members = j.value("members", o.members);
  o.val_size = j.value("val_size", o.val_size);
  o.safeness = parse_safeness(j.value("safeness", std::string("hinge")));
  return o;
}

double worst(const GradcheckResult& r) {
  double m = r.reverse_vs_fd;
  if (!std::isnan(r.implicit_vs_fd)) m = std::max({m, r.implicit_vs_fd, r.implicit_vs_reverse});
  return m;
}

int cmd_gradcheck(const GradcheckArgs& a) {
  struct Item {
    GradcheckOptions opts;
    std::uint64_t seed;
    int steps;
    std::optional<HyperGrad> stored;
    std::string label;
  };
  std::vector<Item> items;
  double threshold = a.threshold;
  if (!a.fixtures.empty()) {
    for (const auto& f : a.fixtures) {
      const Json j = Json::parse(read_text(f));
      items.push_back({case_from_json(j.at("case")), j.at("seed").get<std::uint64_t>(),
                       j.value("steps", a.steps), fixture_grad(j.at("fd")),
                       fs::path(f).filename().string()});
    }
  } else {
    GradcheckOptions o;
    int cases = a.cases;
    std::uint64_t seed = static_cast<std::uint64_t>(std::max(0LL, a.seed));
    int steps = a.steps;
    if (!a.config.empty()) {
      const Json j = Json::parse(read_text(a.config));
      o = case_from_json(j.value("case", Json::object()));
      cases = j.value("cases", cases);
      seed = j.value("seed", seed);
      steps = j.value("steps", steps);
      threshold = j.value("threshold", threshold);
    } else {
      o.family = a.family;
      if (o.family == "linear" || o.family == "linear_regression") o.classes = 1;
    }
    parse_family(o.family);
    for (int c = 0; c < cases; ++c) {
      items.push_back({o, seed + static_cast<std::uint64_t>(c), steps, std::nullopt,
                       o.family + "#" + std::to_string(seed + c)});
    }
  }

  double max_err = 0.0;
  for (const auto& it : items) {
    const GradcheckCase c = make_gradcheck_case(it.opts, it.seed);
    const GradcheckResult r = run_gradcheck(c, it.steps);
    double err = worst(r);
    std::cout << it.label << ": reverse/fd=" << r.reverse_vs_fd;
    if (!std::isnan(r.implicit_vs_fd)) {
      std::cout << " implicit/fd=" << r.implicit_vs_fd
                << " implicit/reverse=" << r.implicit_vs_reverse;
    }
    if (it.stored) {
      const double stored_err = relative_error(r.fd, *it.stored);
      std::cout << " fd/fixture=" << stored_err;
      err = std::max(err, stored_err);
    }
    std::cout << "\n";
    max_err = std::max(max_err, err);
    if (!a.emit.empty()) {
      Json out;
      out["case"] = case_json(it.opts);
      out["seed"] = it.seed;
      out["steps"] = it.steps;
      Json q = Json::array();
      for (Eigen::Index i = 0; i < r.fd.d_q.rows(); ++i) {
        std::vector<double> row(static_cast<std::size_t>(r.fd.d_q.cols()));
        for (Eigen::Index k = 0; k < r.fd.d_q.cols(); ++k) row[k] = r.fd.d_q(i, k);
        q.push_back(row);
      }
      out["fd"] = {{"d_w", std::vector<double>(r.fd.d_w.data(), r.fd.d_w.data() + r.fd.d_w.size())},
                   {"d_q", q}};
      const fs::path target =
          items.size() == 1 ? fs::path(a.emit)
                            : fs::path(a.emit) / (it.opts.family + "_" + std::to_string(it.seed) + ".json");
      if (items.size() > 1) fs::create_directories(a.emit);
      write_text(target, out.dump(2) + "\n");
    }
  }
  std::cout << "max relative error " << max_err << " (threshold " << threshold << ")\n";
  return max_err < threshold ? kExitOk : kExitError;
}

int cmd_report(const std::string& dir, const std::string& csv) {
  const auto reports = load_reports(dir);
  std::map<std::string, std::vector<RunReport>> groups;
  std::vector<std::string> order;
  for (const auto& r : reports) {
    const std::string g = group_name(r);
    if (!groups.count(g)) order.push_back(g);
    groups[g].push_back(r);
  }
  std::vector<AggregateRow> rows;
  for (const auto& g : order) {
    const auto part = aggregate(groups[g], g);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  std::cout << aggregate_table(rows);
  if (!csv.empty()) write_text(csv, aggregate_csv(rows));
  return kExitOk;
}

int cmd_project_check(int cases, long long seed, double tolerance) {
  const auto st = oracle::project_check(cases, static_cast<std::uint64_t>(std::max(0LL, seed)),
                                        tolerance);
  const double share = st.cases > 0 ? static_cast<double>(st.classification_within) / st.cases : 1.0;
  std::cout << "cases " << st.cases << "\n"
            << "project_w max distance gap " << st.max_gap_w << "\n"
            << "project_q_regression max distance gap " << st.max_gap_ball << "\n"
            << "max infeasibility " << st.max_infeasibility << "\n"
            << "project_q_classification within " << 100.0 * tolerance << "% of optimum: "
            << st.classification_within << "/" << st.cases << " (worst ratio " << st.worst_ratio
            << ", mean ratio " << st.mean_ratio << ")\n";
  const bool ok = st.max_gap_w <= 1e-3 && st.max_gap_ball <= 1e-3 && st.max_infeasibility <= 1e-9 &&
                  share >= 0.95;
  return ok ? kExitOk : kExitError;
}

std::vector<std::string> split_grid(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int cmd_sweep(const ConfigArgs& a, const std::string& axis, const std::string& grid,
              const std::string& csv) {
  const Protocol p = resolve_protocol(a);
  const auto rows = sweep(p, axis, split_grid(grid));
  std::cout << aggregate_table(rows);
  if (!csv.empty()) write_text(csv, aggregate_csv(rows));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"pgs: weakly supervised learning with validation-guided label quality"};
  app.require_subcommand(1);

  ConfigArgs run_args;
  std::string out_dir = "runs";
  bool allow_unsafe = false;
  auto* run = app.add_subcommand("run", "Run the methods of a protocol and write reports");
  add_config_args(run, run_args);
  run->add_option("-o,--out", out_dir, "Output directory")->envname("PGS_OUT");
  run->add_flag("--allow-unsafe", allow_unsafe, "Exit 0 even when a run is flagged unsafe");

  GradcheckArgs gc;
  auto* grad = app.add_subcommand("gradcheck", "Cross-check the hypergradient paths");
  grad->add_option("-c,--config", gc.config, "Gradcheck JSON (case, cases, seed, steps, threshold)");
  grad->add_option("--family", gc.family, "linear | softmax | mlp");
  grad->add_option("--cases", gc.cases, "Number of random instances");
  grad->add_option("--seed", gc.seed, "First instance seed")->envname("PGS_SEED");
  grad->add_option("--steps", gc.steps, "Unrolled steps of the reverse path");
  grad->add_option("--threshold", gc.threshold, "Maximum accepted relative error");
  grad->add_option("--fixture", gc.fixtures, "Stored instance with its finite-difference gradient");
  grad->add_option("--emit-fixture", gc.emit, "Write the instances with their FD gradients");

  std::string report_dir;
  std::string report_csv;
  auto* report = app.add_subcommand("report", "Aggregate run reports into mean +- std tables");
  report->add_option("dir", report_dir, "Directory of run reports")->required();
  report->add_option("--csv", report_csv, "Also write the table as CSV");

  int pc_cases = 500;
  long long pc_seed = 0;
  double pc_tol = 0.05;
  auto* pcheck = app.add_subcommand("project-check", "Compare projections with reference solvers");
  pcheck->add_option("--cases", pc_cases, "Random instances");
  pcheck->add_option("--seed", pc_seed, "Seed")->envname("PGS_SEED");
  pcheck->add_option("--tolerance", pc_tol, "Accepted relative excess distance (classification)");

  ConfigArgs sweep_args;
  std::string axis = "validation_size";
  std::string grid;
  std::string sweep_csv;
  auto* sw = app.add_subcommand("sweep", "Run a protocol over a grid and aggregate per cell");
  add_config_args(sw, sweep_args);
  sw->add_option("--axis", axis, "validation_size | iterations");
  sw->add_option("--grid", grid, "Comma-separated cells, e.g. 100,200 or 100x10,500x20")->required();
  sw->add_option("--csv", sweep_csv, "Also write the table as CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitError;
  }

  try {
    if (*run) return cmd_run(run_args, out_dir, !allow_unsafe);
    if (*grad) return cmd_gradcheck(gc);
    if (*report) return cmd_report(report_dir, report_csv);
    if (*pcheck) return cmd_project_check(pc_cases, pc_seed, pc_tol);
    if (*sw) return cmd_sweep(sweep_args, axis, grid, sweep_csv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitError;
  }
  return kExitError;
}
