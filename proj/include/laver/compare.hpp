#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace laver {

/// One metrics line with every numeric leaf flattened to a dotted key,
/// e.g. "lm" or "diagnostics.cosine.4". Strings are dropped.
struct MetricRow {
  std::int64_t step = 0;
  std::map<std::string, double> values;
};

std::vector<MetricRow> parse_metrics(const std::string& jsonl);
std::vector<MetricRow> load_metrics(const std::filesystem::path& path);

struct FinalValue {
  std::string metric;
  double a = 0.0;
  double b = 0.0;
  double delta = 0.0;  // b - a
};

struct CompareReport {
  std::vector<std::int64_t> steps;
  std::vector<std::map<std::string, double>> deltas;  // per step, b - a
  std::vector<FinalValue> final_values;              // last step, sorted by metric
  double max_abs_delta = 0.0;
};

/// Both logs must cover the same steps in the same order and report the same
/// metrics at each step; otherwise std::invalid_argument.
CompareReport compare_metrics(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b);

std::string render_table(const CompareReport& report);

}  // namespace laver
