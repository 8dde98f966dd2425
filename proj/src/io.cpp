#include "pgs/io.hpp"

#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

namespace pgs {

namespace fs = std::filesystem;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) {
    const auto b = cell.find_first_not_of(" \t\r\"");
    const auto e = cell.find_last_not_of(" \t\r\"");
    out.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_number(const std::string& s, int row, const std::string& column) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw Error("CSV row " + std::to_string(row) + ", column '" + column + "': not a number: '" +
                s + "'");
  }
}

std::uint32_t read_be32(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw Error("IDX file truncated: " + path.string());
  }
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

Json vector_json(const Vector& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Vector json_vector(const Json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size()));
}

}  // namespace

WeakDataset read_csv(const fs::path& path, const CsvOptions& opts) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open CSV file " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw Error("CSV file is empty: " + path.string());
  const auto header = split_csv_line(line);
  int label_col = -1;
  int flag_col = -1;
  std::vector<int> feature_cols;
  for (int c = 0; c < static_cast<int>(header.size()); ++c) {
    if (header[c] == opts.label_column) {
      label_col = c;
    } else if (!opts.labeled_column.empty() && header[c] == opts.labeled_column) {
      flag_col = c;
    } else {
      feature_cols.push_back(c);
    }
  }
  if (label_col < 0) throw Error("CSV has no label column '" + opts.label_column + "'");
  if (!opts.labeled_column.empty() && flag_col < 0) {
    throw Error("CSV has no labeled-flag column '" + opts.labeled_column + "'");
  }
  std::vector<std::vector<double>> rows;
  std::vector<double> labels;
  Mask labeled;
  int row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != header.size()) {
      throw Error("CSV row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                  " cells, header has " + std::to_string(header.size()));
    }
    std::vector<double> feats;
    feats.reserve(feature_cols.size());
    for (int c : feature_cols) feats.push_back(parse_number(cells[c], row, header[c]));
    rows.push_back(std::move(feats));
    const bool present = flag_col < 0 || parse_number(cells[flag_col], row, header[flag_col]) != 0.0;
    labeled.push_back(present);
    labels.push_back(cells[label_col].empty() && !present
                         ? 0.0
                         : parse_number(cells[label_col], row, header[label_col]));
  }
  if (rows.empty()) throw Error("CSV file has no data rows: " + path.string());
  Matrix x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(feature_cols.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < feature_cols.size(); ++c) {
      x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = rows[i][c];
    }
  }
  if (opts.regression) {
    return WeakDataset::regression(std::move(x), Eigen::Map<const Vector>(labels.data(), labels.size()),
                                   std::move(labeled));
  }
  std::vector<int> classes(labels.size());
  int max_label = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != std::floor(labels[i])) {
      throw Error("CSV row " + std::to_string(i + 2) + ": class label is not an integer");
    }
    classes[i] = static_cast<int>(labels[i]);
    max_label = std::max(max_label, classes[i]);
  }
  const int k = opts.classes > 0 ? opts.classes : std::max(2, max_label + 1);
  return WeakDataset::classification(std::move(x), std::move(classes), k, std::move(labeled));
}

Matrix read_idx_images(const fs::path& path, int limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open IDX file " + path.string());
  const std::uint32_t magic = read_be32(in, path);
  if (magic != 0x00000803) throw Error("not an IDX image file (bad magic): " + path.string());
  const std::uint32_t count = read_be32(in, path);
  const std::uint32_t rows = read_be32(in, path);
  const std::uint32_t cols = read_be32(in, path);
  const std::uint32_t n = limit > 0 ? std::min<std::uint32_t>(count, limit) : count;
  const std::size_t pixels = static_cast<std::size_t>(rows) * cols;
  Matrix out(n, static_cast<Eigen::Index>(pixels));
  std::vector<unsigned char> buf(pixels);
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(pixels))) {
      throw Error("IDX image file truncated at image " + std::to_string(i));
    }
    for (std::size_t p = 0; p < pixels; ++p) out(i, static_cast<Eigen::Index>(p)) = buf[p] / 255.0;
  }
  return out;
}

std::vector<int> read_idx_labels(const fs::path& path, int limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open IDX file " + path.string());
  const std::uint32_t magic = read_be32(in, path);
  if (magic != 0x00000801) throw Error("not an IDX label file (bad magic): " + path.string());
  const std::uint32_t count = read_be32(in, path);
  const std::uint32_t n = limit > 0 ? std::min<std::uint32_t>(count, limit) : count;
  std::vector<unsigned char> buf(n);
  if (!in.read(reinterpret_cast<char*>(buf.data()), n)) throw Error("IDX label file truncated");
  return {buf.begin(), buf.end()};
}

Json report_to_json(const RunReport& r) {
  Json j;
  j["method"] = r.method;
  j["seed"] = r.seed;
  j["w"] = vector_json(r.params.w);
  Json q = Json::array();
  for (Eigen::Index i = 0; i < r.params.q.rows(); ++i) q.push_back(vector_json(r.params.q.row(i).transpose()));
  j["q"] = q;
  j["frozen"] = std::vector<bool>(r.params.frozen.begin(), r.params.frozen.end());
  j["theta"] = vector_json(r.theta.theta);
  j["baseline_losses"] = vector_json(r.baseline_losses);
  j["val_losses_before"] = vector_json(r.val_losses_before);
  j["val_losses_after"] = vector_json(r.val_losses_after);
  j["gaps_after"] = vector_json(r.gaps_after);
  j["unsafe"] = r.unsafe;
  j["objective_trace"] = r.objective_trace;
  j["test_metrics"] = r.test_metrics;
  j["baseline_metrics"] = r.baseline_metrics;
  j["diagnostics"] = r.diagnostics;
  j["config"] = r.config_echo.empty() ? Json(nullptr) : Json::parse(r.config_echo);
  return j;
}

RunReport report_from_json(const Json& j) {
  RunReport r;
  r.method = j.at("method").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.params.w = json_vector(j.at("w"));
  const auto& q = j.at("q");
  const Eigen::Index rows = static_cast<Eigen::Index>(q.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(q[0].size()) : 0;
  r.params.q.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) r.params.q.row(i) = json_vector(q[i]).transpose();
  const auto frozen = j.at("frozen").get<std::vector<bool>>();
  r.params.frozen.assign(frozen.begin(), frozen.end());
  r.theta.theta = json_vector(j.at("theta"));
  r.baseline_losses = json_vector(j.at("baseline_losses"));
  r.val_losses_before = json_vector(j.at("val_losses_before"));
  r.val_losses_after = json_vector(j.at("val_losses_after"));
  r.gaps_after = json_vector(j.at("gaps_after"));
  r.unsafe = j.at("unsafe").get<bool>();
  r.objective_trace = j.at("objective_trace").get<std::vector<double>>();
  r.test_metrics = j.at("test_metrics").get<std::map<std::string, double>>();
  r.baseline_metrics = j.at("baseline_metrics").get<std::map<std::string, double>>();
  r.diagnostics = j.at("diagnostics").get<std::map<std::string, std::string>>();
  if (j.contains("config") && !j.at("config").is_null()) r.config_echo = canonical(j.at("config"));
  return r;
}

void write_report(const fs::path& dir, const RunReport& r) {
  fs::create_directories(dir);
  write_text(dir / "report.json", canonical(report_to_json(r)));
  Json timing;
  timing["wall_clock_seconds"] = r.wall_clock_seconds;
  write_text(dir / "timing.json", timing.dump(2) + "\n");
}

std::string canonical(const Json& j) { return j.dump(2) + "\n"; }

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[h & 0xF];
    h >>= 4;
  }
  return out;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

}  // namespace pgs
