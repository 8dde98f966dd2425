#include "pgs/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <exception>
#include <iomanip>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "pgs/hypergrad.hpp"
#include "pgs/lower_solver.hpp"
#include "pgs/model.hpp"
#include "pgs/pgs.hpp"
#include "pgs/projection.hpp"

namespace pgs {

namespace fs = std::filesystem;

namespace {

// Reads known keys from one JSON object and rejects the rest.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) throw Error("config: '" + where_ + "' must be an object");
  }

  template <class T>
  void get(const std::string& key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const Json::exception& e) {
      throw Error("config: bad value for '" + path(key) + "': " + e.what());
    }
  }

  void get_optional(const std::string& key, std::optional<double>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    double v = 0.0;
    get(key, v);
    out = v;
  }

  std::optional<Reader> child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return std::nullopt;
    return Reader(j_.at(key), path(key));
  }

  void finish() const {
    for (const auto& item : j_.items()) {
      if (!seen_.count(item.key())) throw Error("config: unknown key '" + path(item.key()) + "'");
    }
  }

 private:
  std::string path(const std::string& key) const { return where_.empty() ? key : where_ + "." + key; }

  const Json& j_;
  std::string where_;
  std::set<std::string> seen_;
};

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

bool is_pgs_method(const std::string& m) { return m == "pgs_convex" || m == "pgs_nonconvex"; }

void check_method(const std::string& m) {
  if (m != "baseline" && m != "validation_only" && !is_pgs_method(m)) {
    throw Error("unknown method '" + m + "'");
  }
}

// Plain supervised training with the solver the model family calls for.
ModelParams fit(const ModelSpec& spec, const WeakDataset& d, const LabelQualityParams& p,
                const PgsConfig& cfg) {
  if (spec.is_convex()) {
    ConvexSolveOptions o;
    o.tol = cfg.inner_tol;
    o.cg = cfg.cg;
    return train_convex(spec, d, p, o);
  }
  return train_unrolled(spec, d, p, initial_theta(spec, cfg.seed), cfg.lower_step, cfg.lower_iters)
      .params;
}

void add_test_metrics(std::map<std::string, double>& out, const ModelSpec& spec,
                      const Vector& theta, const WeakDataset& test) {
  const MetricKind kind =
      test.task().is_classification() ? MetricKind::Accuracy : MetricKind::MeanSquaredError;
  out[to_string(kind)] = evaluate(spec, theta, test, kind).value;
}

}  // namespace

Json protocol_to_json(const Protocol& p) {
  Json j;
  j["name"] = p.name;
  j["data"] = {{"kind", p.data.kind},
               {"task", p.data.task},
               {"dim", p.data.dim},
               {"classes", p.data.classes},
               {"separation", p.data.separation},
               {"noise_std", p.data.noise_std},
               {"problem_seed", p.data.problem_seed},
               {"path", p.data.path},
               {"label_column", p.data.label_column},
               {"labeled_column", p.data.labeled_column},
               {"images", p.data.images},
               {"labels", p.data.labels}};
  j["split"] = {{"train", p.split.train},
                {"val", p.split.val},
                {"hyper", p.split.hyper},
                {"test", p.split.test}};
  j["noise"] = {{"kind", p.noise.kind},
                {"ratio", p.noise.ratio},
                {"sigma", p.noise.sigma},
                {"fraction", p.noise.fraction}};
  j["labeled_fraction"] = p.labeled_fraction;
  j["members"] = p.members;
  j["bias"] = {{"group_a", p.bias.group_a}, {"ratio_a", p.bias.ratio_a}, {"ratio_b", p.bias.ratio_b}};
  j["model"] = {{"family", p.model.family}, {"hidden", p.model.hidden}, {"l2", p.model.l2}};
  j["pgs"] = {{"lambda", p.pgs.lambda},
              {"safeness", to_string(p.pgs.safeness_mode)},
              {"lower_iters", p.pgs.lower_iters},
              {"upper_iters", p.pgs.upper_iters},
              {"lower_step", p.pgs.lower_step},
              {"inner_tol", p.pgs.inner_tol},
              {"upper",
               {{"lr", p.pgs.upper.lr},
                {"beta1", p.pgs.upper.beta1},
                {"beta2", p.pgs.upper.beta2},
                {"epsilon", p.pgs.upper.epsilon}}},
              {"cg", {{"max_iters", p.pgs.cg.max_iters}, {"tol", p.pgs.cg.tol}}}};
  j["region"] = {{"eps1", p.eps1 ? Json(*p.eps1) : Json(nullptr)},
                 {"eps2", p.eps2 ? Json(*p.eps2) : Json(nullptr)}};
  j["w_threshold"] = p.w_threshold;
  j["methods"] = p.methods;
  j["seeds"] = p.seeds;
  j["threads"] = p.threads;
  return j;
}

Protocol protocol_from_json(const Json& j) {
  Protocol p;
  Reader r(j, "");
  r.get("name", p.name);
  if (auto d = r.child("data")) {
    d->get("kind", p.data.kind);
    d->get("task", p.data.task);
    d->get("dim", p.data.dim);
    d->get("classes", p.data.classes);
    d->get("separation", p.data.separation);
    d->get("noise_std", p.data.noise_std);
    d->get("problem_seed", p.data.problem_seed);
    d->get("path", p.data.path);
    d->get("label_column", p.data.label_column);
    d->get("labeled_column", p.data.labeled_column);
    d->get("images", p.data.images);
    d->get("labels", p.data.labels);
    d->finish();
  }
  if (auto s = r.child("split")) {
    s->get("train", p.split.train);
    s->get("val", p.split.val);
    s->get("hyper", p.split.hyper);
    s->get("test", p.split.test);
    s->finish();
  }
  if (auto n = r.child("noise")) {
    n->get("kind", p.noise.kind);
    n->get("ratio", p.noise.ratio);
    n->get("sigma", p.noise.sigma);
    n->get("fraction", p.noise.fraction);
    n->finish();
  }
  r.get("labeled_fraction", p.labeled_fraction);
  r.get("members", p.members);
  if (auto b = r.child("bias")) {
    b->get("group_a", p.bias.group_a);
    b->get("ratio_a", p.bias.ratio_a);
    b->get("ratio_b", p.bias.ratio_b);
    b->finish();
  }
  if (auto m = r.child("model")) {
    m->get("family", p.model.family);
    m->get("hidden", p.model.hidden);
    m->get("l2", p.model.l2);
    m->finish();
  }
  if (auto g = r.child("pgs")) {
    std::string safeness = to_string(p.pgs.safeness_mode);
    g->get("lambda", p.pgs.lambda);
    g->get("safeness", safeness);
    p.pgs.safeness_mode = parse_safeness(safeness);
    g->get("lower_iters", p.pgs.lower_iters);
    g->get("upper_iters", p.pgs.upper_iters);
    g->get("lower_step", p.pgs.lower_step);
    g->get("inner_tol", p.pgs.inner_tol);
    if (auto u = g->child("upper")) {
      u->get("lr", p.pgs.upper.lr);
      u->get("beta1", p.pgs.upper.beta1);
      u->get("beta2", p.pgs.upper.beta2);
      u->get("epsilon", p.pgs.upper.epsilon);
      u->finish();
    }
    if (auto c = g->child("cg")) {
      c->get("max_iters", p.pgs.cg.max_iters);
      c->get("tol", p.pgs.cg.tol);
      c->finish();
    }
    g->finish();
  }
  if (auto reg = r.child("region")) {
    reg->get_optional("eps1", p.eps1);
    reg->get_optional("eps2", p.eps2);
    reg->finish();
  }
  r.get("w_threshold", p.w_threshold);
  r.get("methods", p.methods);
  r.get("seeds", p.seeds);
  r.get("threads", p.threads);
  r.finish();

  if (p.data.kind != "synthetic" && p.data.kind != "csv" && p.data.kind != "mnist") {
    throw Error("config: unknown data.kind '" + p.data.kind + "'");
  }
  if (p.data.task != "classification" && p.data.task != "regression") {
    throw Error("config: data.task must be 'classification' or 'regression'");
  }
  if (p.noise.kind != "none" && p.noise.kind != "flip" && p.noise.kind != "gauss") {
    throw Error("config: unknown noise.kind '" + p.noise.kind + "'");
  }
  if (p.split.train < 1 || p.split.val < 1 || p.split.test < 1 || p.split.hyper < 0) {
    throw Error("config: split sizes must be positive (hyper may be 0)");
  }
  if (!(p.labeled_fraction > 0.0 && p.labeled_fraction <= 1.0)) {
    throw Error("config: labeled_fraction must lie in (0,1]");
  }
  if (p.members < 1) throw Error("config: members must be >= 1");
  if (p.threads < 0) throw Error("config: threads must be >= 0");
  for (const auto& m : p.methods) check_method(m);
  parse_family(p.model.family);
  validate_config(p.pgs);
  return p;
}

Protocol load_protocol(const fs::path& path) {
  Json j;
  try {
    j = Json::parse(read_text(path));
  } catch (const Json::exception& e) {
    throw Error("config " + path.string() + ": " + e.what());
  }
  return protocol_from_json(j);
}

void apply_override(Json& config, const std::string& dotted, const std::string& value) {
  if (dotted.empty()) throw Error("empty override path");
  Json* node = &config;
  std::size_t start = 0;
  while (true) {
    const std::size_t dot = dotted.find('.', start);
    const std::string key = dotted.substr(start, dot == std::string::npos ? dotted.npos : dot - start);
    if (key.empty()) throw Error("malformed override path '" + dotted + "'");
    if (!node->is_object()) *node = Json::object();
    if (dot == std::string::npos) {
      Json parsed = Json::parse(value, nullptr, false);
      (*node)[key] = parsed.is_discarded() ? Json(value) : parsed;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

ModelSpec model_spec(const Protocol& p, int input_dim, const TaskKind& task) {
  const ModelFamily family = parse_family(p.model.family);
  const int outputs = task.is_classification() ? task.classes : 1;
  switch (family) {
    case ModelFamily::LinearRegression:
      return ModelSpec::linear_regression(input_dim, p.model.l2);
    case ModelFamily::SoftmaxRegression:
      return ModelSpec::softmax_regression(input_dim, outputs, p.model.l2);
    case ModelFamily::TwoLayerMlp:
      return ModelSpec::mlp(input_dim, outputs, p.model.hidden, p.model.l2);
  }
  throw Error("unknown model family");
}

PreparedSplit prepare_split(const Protocol& p, std::uint64_t seed) {
  const bool regression = p.data.task == "regression";
  const int total = p.split.total();
  WeakDataset pool;
  if (p.data.kind == "synthetic") {
    if (regression) {
      pool = linear_data(total, p.data.dim, p.data.noise_std, p.data.problem_seed,
                         derive_seed(seed, 1));
    } else {
      GaussianMixtureOptions g;
      g.n = total;
      g.dim = p.data.dim;
      g.classes = p.data.classes;
      g.separation = p.data.separation;
      pool = gaussian_mixture(g, p.data.problem_seed, derive_seed(seed, 1));
    }
  } else if (p.data.kind == "csv") {
    CsvOptions o;
    o.label_column = p.data.label_column;
    o.labeled_column = p.data.labeled_column;
    o.regression = regression;
    o.classes = regression ? 0 : p.data.classes;
    pool = read_csv(p.data.path, o);
  } else {
    if (regression) throw Error("mnist data is a classification task");
    Matrix x = read_idx_images(p.data.images, total);
    std::vector<int> y = read_idx_labels(p.data.labels, total);
    if (static_cast<int>(y.size()) != x.rows()) throw Error("IDX image and label counts differ");
    pool = WeakDataset::classification(std::move(x), std::move(y), 10);
  }
  validate_dataset(pool);

  const auto parts = random_split(pool.size(), {p.split.train, p.split.val, p.split.hyper,
                                                p.split.test},
                                  derive_seed(seed, 2));
  PreparedSplit out;
  WeakDataset train = pool.subset(parts[0]);
  out.val = pool.subset(parts[1]);
  out.test = pool.subset(parts[3]);

  out.truth.corruption_mask.assign(train.size(), false);
  if (regression) {
    out.truth.true_targets = train.targets();
  } else {
    out.truth.true_classes = train.classes();
  }
  if (p.noise.kind == "flip") {
    Injected inj = inject_uniform_flip(train, p.noise.ratio, derive_seed(seed, 3));
    train = std::move(inj.data);
    out.truth = std::move(inj.truth);
  } else if (p.noise.kind == "gauss") {
    Injected inj = inject_gauss_noise(train, p.noise.sigma, derive_seed(seed, 3), p.noise.fraction);
    train = std::move(inj.data);
    out.truth = std::move(inj.truth);
  }
  if (p.labeled_fraction < 1.0) {
    train = mask_labels(train, p.labeled_fraction, derive_seed(seed, 4));
    for (int i = 0; i < train.size(); ++i) {
      if (!train.labeled_mask()[i]) out.truth.corruption_mask[i] = true;
    }
  }
  out.train = std::move(train);
  if (!p.bias.group_a.empty()) {
    out.val = bias_validation(out.val, p.bias.group_a, p.bias.ratio_a, p.bias.ratio_b,
                              derive_seed(seed, 5));
  }
  out.ensemble = make_ensemble(out.val, p.members, derive_seed(seed, 6));
  out.spec = model_spec(p, out.train.dim(), out.train.task());
  check_compatible(out.spec, out.train);
  return out;
}

Json run_config(const Protocol& p, const std::string& method, std::uint64_t seed) {
  Json j = protocol_to_json(p);
  j["methods"] = Json::array({method});
  j["seeds"] = Json::array({seed});
  j.erase("threads");
  return j;
}

RunReport run_method(const Protocol& p, const PreparedSplit& split, const std::string& method,
                     std::uint64_t seed) {
  check_method(method);
  const auto started = std::chrono::steady_clock::now();
  PgsConfig cfg = p.pgs;
  cfg.seed = seed;
  const WslMode mode = p.mode();
  const ModelSpec& spec = split.spec;
  const bool classification = split.train.task().is_classification();

  RunReport report;
  if (method == "baseline" || method == "validation_only") {
    const WeakDataset data =
        method == "baseline" ? WeakDataset::concat(split.train, split.val) : split.val;
    const LabelQualityParams params = baseline_params(data, mode);
    report.theta = fit(spec, data, params, cfg);
    report.method = method;
    report.seed = seed;
    // Only the training part of the weights is reported.
    report.params = baseline_params(split.train, mode);
    Vector losses(split.ensemble.members());
    for (int i = 0; i < split.ensemble.members(); ++i) {
      losses(i) = validation_loss(spec, report.theta.theta, split.ensemble.base_set,
                                  split.ensemble.member_indices[i]);
    }
    report.val_losses_after = losses;
    add_test_metrics(report.test_metrics, spec, report.theta.theta, split.test);
  } else {
    const InnerSolve inner = method == "pgs_convex" ? InnerSolve::Convex : InnerSolve::Unrolled;
    const BaselineResult base = compute_baseline(spec, split.train, split.ensemble, cfg, inner, mode);
    FeasibleRegion region = default_region(split.train, initial_params(split.train, mode));
    if (p.eps1) region.eps1 = *p.eps1;
    if (p.eps2) region.eps2 = *p.eps2;
    report = method == "pgs_convex"
                 ? pgs_convex(spec, split.train, base.ensemble, cfg, region, mode)
                 : pgs_nonconvex(spec, split.train, base.ensemble, cfg, region, mode);
    add_test_metrics(report.test_metrics, spec, report.theta.theta, split.test);
    add_test_metrics(report.baseline_metrics, spec, base.theta0.theta, split.test);
    if (split.truth.corrupted_count() > 0 &&
        split.truth.corrupted_count() < split.truth.size()) {
      report.test_metrics["weight_auc"] = weight_auc(report.params, split.truth).value;
    }
    if (classification && mode == WslMode::LabelNoise && split.truth.corrupted_count() > 0) {
      const auto corrections = extract_corrections(report.params, split.train, p.w_threshold);
      report.test_metrics["correction_f1"] = correction_f1(corrections, split.truth).value;
      int proposals = 0;
      for (const auto& c : corrections) proposals += c.corrected ? 1 : 0;
      report.diagnostics["corrections_proposed"] = std::to_string(proposals);
    }
    std::ostringstream eps;
    eps << std::setprecision(17) << region.eps1 << " " << region.eps2;
    report.diagnostics["region"] = eps.str();
  }
  report.diagnostics["train_size"] = std::to_string(split.train.size());
  report.diagnostics["validation_size"] = std::to_string(split.val.size());
  report.config_echo = canonical(run_config(p, method, seed));
  report.wall_clock_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

std::vector<RunReport> run_experiment(const Protocol& p) {
  for (const auto& m : p.methods) check_method(m);
  struct Job {
    std::uint64_t seed;
    std::string method;
  };
  std::vector<Job> jobs;
  for (std::uint64_t s : p.seeds) {
    for (const auto& m : p.methods) jobs.push_back({s, m});
  }
  std::vector<RunReport> out(jobs.size());
  std::vector<std::exception_ptr> errors(jobs.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        out[i] = run_method(p, prepare_split(p, jobs[i].seed), jobs[i].method, jobs[i].seed);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  unsigned threads = p.threads > 0 ? static_cast<unsigned>(p.threads)
                                   : std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(jobs.size(), 1)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

std::vector<AggregateRow> aggregate(const std::vector<RunReport>& reports,
                                    const std::string& group) {
  std::vector<std::string> methods;
  std::map<std::string, std::map<std::string, std::vector<double>>> values;
  for (const RunReport& r : reports) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    for (const auto& [name, v] : r.test_metrics) values[r.method][name].push_back(v);
    if (is_pgs_method(r.method)) values[r.method]["safe_runs"].push_back(r.unsafe ? 0.0 : 1.0);
  }
  std::vector<AggregateRow> rows;
  for (const auto& m : methods) {
    for (const auto& [name, v] : values[m]) {
      AggregateRow row;
      row.group = group;
      row.method = m;
      row.metric = name;
      row.count = static_cast<int>(v.size());
      double sum = 0.0;
      for (double x : v) sum += x;
      row.mean = sum / static_cast<double>(v.size());
      row.std = sample_std(v, row.mean);
      rows.push_back(row);
    }
  }
  return rows;
}

std::string aggregate_csv(const std::vector<AggregateRow>& rows) {
  std::ostringstream os;
  os << "group,method,metric,count,mean,std\n";
  os << std::setprecision(10);
  for (const auto& r : rows) {
    os << r.group << ',' << r.method << ',' << r.metric << ',' << r.count << ',' << r.mean << ','
       << r.std << '\n';
  }
  return os.str();
}

std::string aggregate_table(const std::vector<AggregateRow>& rows) {
  std::vector<std::string> methods;
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>> cells;
  for (const auto& r : rows) {
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) {
      methods.push_back(r.method);
    }
    const auto key = std::make_pair(r.group, r.metric);
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) keys.push_back(key);
    std::ostringstream cell;
    cell << std::fixed << std::setprecision(4) << r.mean << " +- " << r.std;
    cells[key][r.method] = cell.str();
  }
  std::vector<std::string> header = {"group", "metric"};
  header.insert(header.end(), methods.begin(), methods.end());
  std::vector<std::vector<std::string>> table = {header};
  for (const auto& key : keys) {
    std::vector<std::string> line = {key.first, key.second};
    for (const auto& m : methods) {
      const auto it = cells[key].find(m);
      line.push_back(it == cells[key].end() ? "-" : it->second);
    }
    table.push_back(line);
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) width[c] = std::max(width[c], line[c].size());
  }
  std::ostringstream os;
  for (const auto& line : table) {
    for (std::size_t c = 0; c < line.size(); ++c) {
      os << std::left << std::setw(static_cast<int>(width[c])) << line[c];
      os << (c + 1 < line.size() ? "  " : "\n");
    }
  }
  return os.str();
}

std::vector<SweepCell> sweep_cells(const Protocol& base, const std::string& axis,
                                   const std::vector<std::string>& grid) {
  if (grid.empty()) throw Error("sweep grid is empty");
  std::vector<SweepCell> cells;
  for (const auto& value : grid) {
    SweepCell cell;
    cell.protocol = base;
    if (axis == "validation_size") {
      std::size_t used = 0;
      int v = 0;
      try {
        v = std::stoi(value, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != value.size() || v < 1) throw Error("bad validation size '" + value + "'");
      cell.protocol.split.val = v;
      cell.label = "n_v=" + value;
    } else if (axis == "iterations") {
      const auto x = value.find('x');
      int t = 0;
      int l = 0;
      try {
        if (x == std::string::npos) throw std::invalid_argument(value);
        t = std::stoi(value.substr(0, x));
        l = std::stoi(value.substr(x + 1));
      } catch (const std::exception&) {
        throw Error("bad iteration cell '" + value + "', expected TxL");
      }
      cell.protocol.pgs.lower_iters = t;
      cell.protocol.pgs.upper_iters = l;
      validate_config(cell.protocol.pgs);
      cell.label = "T=" + std::to_string(t) + ",L=" + std::to_string(l);
    } else {
      throw Error("unknown sweep axis '" + axis + "' (validation_size | iterations)");
    }
    cells.push_back(std::move(cell));
  }
  return cells;
}

std::vector<AggregateRow> sweep(const Protocol& base, const std::string& axis,
                                const std::vector<std::string>& grid) {
  std::vector<AggregateRow> rows;
  for (const SweepCell& cell : sweep_cells(base, axis, grid)) {
    const auto part = aggregate(run_experiment(cell.protocol), cell.label);
    rows.insert(rows.end(), part.begin(), part.end());
  }
  return rows;
}

std::vector<RunReport> load_reports(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error("not a directory: " + dir.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().filename() == "report.json") {
      files.push_back(entry.path());
    }
  }
  std::sort(files.begin(), files.end());
  std::vector<RunReport> out;
  for (const auto& f : files) {
    try {
      out.push_back(report_from_json(Json::parse(read_text(f))));
    } catch (const Json::exception& e) {
      throw Error("bad report " + f.string() + ": " + e.what());
    }
  }
  return out;
}

std::vector<fs::path> write_reports(const fs::path& out, const std::vector<RunReport>& reports) {
  std::vector<fs::path> dirs;
  for (const RunReport& r : reports) {
    const fs::path dir = out / fnv1a_hex(r.config_echo);
    write_report(dir, r);
    dirs.push_back(dir);
  }
  return dirs;
}

GradcheckCase make_gradcheck_case(const GradcheckOptions& opts, std::uint64_t seed) {
  const ModelFamily family = parse_family(opts.family);
  if (opts.n < 1 || opts.dim < 1 || opts.val_size < 1 || opts.members < 1) {
    throw Error("invalid gradcheck case options");
  }
  const bool classification = family != ModelFamily::LinearRegression;
  const int k = classification ? opts.classes : 1;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // A shared linear rule, so that validation labels say something about training labels.
  Matrix rule(opts.dim, k);
  for (Eigen::Index i = 0; i < rule.size(); ++i) rule.data()[i] = normal(rng);
  auto draw = [&](int n) {
    Matrix x(n, opts.dim);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
    Matrix score = x * rule;
    for (Eigen::Index i = 0; i < score.size(); ++i) score.data()[i] += 0.5 * normal(rng);
    if (!classification) return WeakDataset::regression(x, score.col(0));
    std::vector<int> labels(n);
    for (int i = 0; i < n; ++i) {
      Eigen::Index best = 0;
      score.row(i).maxCoeff(&best);
      labels[i] = static_cast<int>(best);
    }
    return WeakDataset::classification(x, std::move(labels), k);
  };

  GradcheckCase c;
  c.train = draw(opts.n);
  const WeakDataset val = draw(opts.val_size);
  switch (family) {
    case ModelFamily::LinearRegression:
      c.spec = ModelSpec::linear_regression(opts.dim, opts.l2);
      break;
    case ModelFamily::SoftmaxRegression:
      c.spec = ModelSpec::softmax_regression(opts.dim, k, opts.l2);
      break;
    case ModelFamily::TwoLayerMlp:
      c.spec = ModelSpec::mlp(opts.dim, k, opts.hidden, opts.l2);
      break;
  }

  c.params = identity_params(c.train);
  for (int i = 0; i < opts.n; ++i) {
    c.params.w(i) = 0.2 + 0.8 * unit(rng);
    if (classification) {
      for (int j = 0; j < k; ++j) c.params.q(i, j) = std::exp(normal(rng));
      c.params.q.row(i) /= c.params.q.row(i).sum();
    } else {
      c.params.q(i, 0) = 0.3 * normal(rng);
    }
  }

  c.config.safeness_mode = opts.safeness;
  c.config.seed = seed;
  c.config.inner_tol = 1e-11;
  c.config.cg.tol = 1e-10;
  if (c.spec.is_convex()) {
    c.config.lower_step = 1.0 / lipschitz_bound(c.spec, c.train, c.params);
    c.config.lower_iters = 1000;
  } else {
    c.config.lower_step = 0.2;
    c.config.lower_iters = 50;
  }
  const ValidationEnsemble ens = make_ensemble(val, opts.members, derive_seed(seed, 7));
  c.ensemble = compute_baseline(c.spec, c.train, ens, c.config,
                                c.spec.is_convex() ? InnerSolve::Convex : InnerSolve::Unrolled)
                   .ensemble;
  return c;
}

GradcheckResult run_gradcheck(const GradcheckCase& c, int steps, const FdOptions& fd) {
  GradcheckResult out;
  const ModelParams theta0 = initial_theta(c.spec, c.config.seed);
  PipelineOptions pipe;
  pipe.convex.tol = c.config.inner_tol;
  pipe.convex.cg = c.config.cg;
  pipe.theta0 = theta0;
  if (c.spec.is_convex()) {
    const double eta = 1.0 / lipschitz_bound(c.spec, c.train, c.params);
    const ModelParams star = train_convex(c.spec, c.train, c.params, pipe.convex);
    const HyperGrad imp = hypergrad_implicit(c.spec, star.theta, c.train, c.params, c.ensemble,
                                             c.config);
    const UnrollResult un = train_unrolled(c.spec, c.train, c.params, theta0, eta, steps);
    const HyperGrad rev = hypergrad_reverse(c.spec, un.tape, c.train, c.params, c.ensemble,
                                            c.config);
    pipe.inner = InnerSolve::Convex;
    out.fd = hypergrad_fd(c.spec, c.train, c.params, c.ensemble, c.config, pipe, fd);
    out.implicit_vs_fd = relative_error(imp, out.fd);
    out.reverse_vs_fd = relative_error(rev, out.fd);
    out.implicit_vs_reverse = relative_error(imp, rev);
  } else {
    const UnrollResult un =
        train_unrolled(c.spec, c.train, c.params, theta0, c.config.lower_step, steps);
    const HyperGrad rev = hypergrad_reverse(c.spec, un.tape, c.train, c.params, c.ensemble,
                                            c.config);
    pipe.inner = InnerSolve::Unrolled;
    pipe.eta = c.config.lower_step;
    pipe.steps = steps;
    out.fd = hypergrad_fd(c.spec, c.train, c.params, c.ensemble, c.config, pipe, fd);
    out.reverse_vs_fd = relative_error(rev, out.fd);
    out.implicit_vs_fd = std::numeric_limits<double>::quiet_NaN();
    out.implicit_vs_reverse = std::numeric_limits<double>::quiet_NaN();
  }
  return out;
}

}  // namespace pgs
