#pragma once

// File formats: CSV datasets, IDX (MNIST) files, JSON run reports and
// aggregate CSV tables.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "pgs/core.hpp"

namespace pgs {

using Json = nlohmann::json;

struct CsvOptions {
  std::string label_column = "label";
  std::string labeled_column;  // optional 0/1 column; empty means all labeled
  bool regression = false;
  int classes = 0;  // 0 infers max label + 1
};

// Header row, numeric feature columns, a named label column and an optional
// labeled-flag column.
WeakDataset read_csv(const std::filesystem::path& path, const CsvOptions& opts);

// IDX files: big-endian magic 0x00000803 (images, u8 pixels) and 0x00000801
// (labels). Pixels are scaled to [0,1]. `limit` <= 0 reads everything.
Matrix read_idx_images(const std::filesystem::path& path, int limit = 0);
std::vector<int> read_idx_labels(const std::filesystem::path& path, int limit = 0);

Json report_to_json(const RunReport& r);
RunReport report_from_json(const Json& j);

// Writes report.json (deterministic content) and timing.json into `dir`.
void write_report(const std::filesystem::path& dir, const RunReport& r);

// Canonical text of a JSON value (sorted keys, fixed indentation).
std::string canonical(const Json& j);

// 64-bit FNV-1a of text, as 16 hex digits.
std::string fnv1a_hex(const std::string& text);

std::string read_text(const std::filesystem::path& path);
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace pgs
