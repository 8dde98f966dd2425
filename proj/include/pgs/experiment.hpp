#pragma once

// Protocol-driven experiments: data preparation per seed, the four methods
// (baseline, validation_only, pgs_convex, pgs_nonconvex), sweeps and
// aggregation of run reports.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pgs/core.hpp"
#include "pgs/harness.hpp"
#include "pgs/io.hpp"

namespace pgs {

struct DataSource {
  std::string kind = "synthetic";  // synthetic | csv | mnist
  std::string task = "classification";
  // synthetic
  int dim = 10;
  int classes = 2;
  double separation = 2.0;
  double noise_std = 0.1;  // synthetic regression only
  std::uint64_t problem_seed = 0;
  // csv
  std::string path;
  std::string label_column = "label";
  std::string labeled_column;
  // mnist (IDX)
  std::string images;
  std::string labels;
};

struct SplitSizes {
  int train = 400;
  int val = 100;
  int hyper = 0;  // held out, never used by the optimizer
  int test = 1000;
  int total() const { return train + val + hyper + test; }
};

struct NoiseSpec {
  std::string kind = "none";  // none | flip | gauss
  double ratio = 0.0;         // flip
  double sigma = 0.0;         // gauss
  double fraction = 1.0;      // gauss: share of labels perturbed
};

struct BiasSpec {
  std::vector<int> group_a;  // empty disables
  double ratio_a = 1.0;
  double ratio_b = 1.0;
};

struct ModelChoice {
  std::string family = "softmax";
  int hidden = 32;
  double l2 = 1e-4;
};

struct Protocol {
  std::string name = "experiment";
  DataSource data;
  SplitSizes split;
  NoiseSpec noise;
  double labeled_fraction = 1.0;  // < 1 switches to semi-supervised mode
  int members = 3;
  BiasSpec bias;
  ModelChoice model;
  PgsConfig pgs;
  std::optional<double> eps1;  // default: half of the free instances
  std::optional<double> eps2;
  double w_threshold = 0.5;
  std::vector<std::string> methods = {"baseline", "pgs_convex"};
  std::vector<std::uint64_t> seeds = {0};
  int threads = 1;

  WslMode mode() const {
    return labeled_fraction < 1.0 ? WslMode::SemiSupervised : WslMode::LabelNoise;
  }
};

Json protocol_to_json(const Protocol& p);
// Missing keys keep their defaults; unknown keys are rejected.
Protocol protocol_from_json(const Json& j);
Protocol load_protocol(const std::filesystem::path& path);

// Sets a dotted path ("pgs.upper.lr") to `value`, parsed as JSON when
// possible and kept as a string otherwise.
void apply_override(Json& config, const std::string& dotted, const std::string& value);

ModelSpec model_spec(const Protocol& p, int input_dim, const TaskKind& task);

struct PreparedSplit {
  WeakDataset train;  // noisy and/or partially labeled
  PlantedTruth truth;
  WeakDataset val;    // clean, possibly biased
  WeakDataset test;
  ValidationEnsemble ensemble;
  ModelSpec spec;
};

PreparedSplit prepare_split(const Protocol& p, std::uint64_t seed);

// Canonical single-run config: the protocol restricted to one method and seed.
Json run_config(const Protocol& p, const std::string& method, std::uint64_t seed);

RunReport run_method(const Protocol& p, const PreparedSplit& split, const std::string& method,
                     std::uint64_t seed);

// One report per (method, seed), ordered by seed then method regardless of
// the thread count.
std::vector<RunReport> run_experiment(const Protocol& p);

struct AggregateRow {
  std::string group;  // protocol name or sweep cell
  std::string method;
  std::string metric;
  int count = 0;
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, 0 for a single run
};

// Mean and std of every test metric per method, plus "safe_runs" (fraction
// of runs not flagged unsafe) for the PGS methods.
std::vector<AggregateRow> aggregate(const std::vector<RunReport>& reports,
                                    const std::string& group);

std::string aggregate_csv(const std::vector<AggregateRow>& rows);
// Rows are (group, metric), columns are methods, cells "mean +- std".
std::string aggregate_table(const std::vector<AggregateRow>& rows);

struct SweepCell {
  std::string label;
  Protocol protocol;
};

// axis "validation_size": grid of validation sizes.
// axis "iterations": grid of "T x L" pairs, e.g. "100x10".
std::vector<SweepCell> sweep_cells(const Protocol& base, const std::string& axis,
                                   const std::vector<std::string>& grid);

std::vector<AggregateRow> sweep(const Protocol& base, const std::string& axis,
                                const std::vector<std::string>& grid);

// Loads every report.json below `dir` (sorted by path).
std::vector<RunReport> load_reports(const std::filesystem::path& dir);

// Writes each report into <out>/<hash of run config>/.
std::vector<std::filesystem::path> write_reports(const std::filesystem::path& out,
                                                 const std::vector<RunReport>& reports);

// A small random bi-level instance for hypergradient cross-checks.
struct GradcheckCase {
  ModelSpec spec;
  WeakDataset train;
  LabelQualityParams params;
  ValidationEnsemble ensemble;
  PgsConfig config;
};

struct GradcheckOptions {
  std::string family = "softmax";
  int n = 20;
  int dim = 4;
  int classes = 3;
  int hidden = 4;
  double l2 = 0.1;
  int members = 3;
  int val_size = 15;
  SafenessMode safeness = SafenessMode::Hinge;
};

GradcheckCase make_gradcheck_case(const GradcheckOptions& opts, std::uint64_t seed);

struct GradcheckResult {
  double implicit_vs_fd = 0.0;  // NaN when the family has no implicit path
  double reverse_vs_fd = 0.0;
  double implicit_vs_reverse = 0.0;
  HyperGrad fd;
};

// Reverse mode unrolls `steps` steps with eta = 1 / lipschitz_bound (convex)
// or the configured lower step (MLP). FD differentiates the exact solve for
// convex families and the same unroll for the MLP.
GradcheckResult run_gradcheck(const GradcheckCase& c, int steps, const FdOptions& fd = {});

}  // namespace pgs
