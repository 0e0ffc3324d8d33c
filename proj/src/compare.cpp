#include "laver/compare.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace laver {
namespace {

using json = nlohmann::json;

void flatten(const json& j, const std::string& prefix, std::map<std::string, double>& out) {
  if (j.is_number()) {
    out[prefix] = j.get<double>();
  } else if (j.is_boolean()) {
    out[prefix] = j.get<bool>() ? 1.0 : 0.0;
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items()) flatten(v, prefix.empty() ? k : prefix + "." + k, out);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) flatten(j[i], prefix + "." + std::to_string(i), out);
  }
}

}  // namespace

std::vector<MetricRow> parse_metrics(const std::string& jsonl) {
  std::vector<MetricRow> rows;
  std::istringstream in(jsonl);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw std::invalid_argument("metrics line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("step") || !j["step"].is_number_integer()) {
      throw std::invalid_argument("metrics line " + std::to_string(line_no) + ": no integer 'step'");
    }
    MetricRow row;
    row.step = j["step"].get<std::int64_t>();
    j.erase("step");
    flatten(j, "", row.values);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<MetricRow> load_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read metrics " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_metrics(ss.str());
}

CompareReport compare_metrics(const std::vector<MetricRow>& a, const std::vector<MetricRow>& b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("compare: empty metrics log");
  if (a.size() != b.size()) {
    throw std::invalid_argument("compare: logs have " + std::to_string(a.size()) + " and " +
                                std::to_string(b.size()) + " lines");
  }
  CompareReport report;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].step != b[i].step) {
      throw std::invalid_argument("compare: line " + std::to_string(i + 1) + " is step " +
                                  std::to_string(a[i].step) + " in a but " + std::to_string(b[i].step) + " in b");
    }
    std::map<std::string, double> delta;
    for (const auto& [k, va] : a[i].values) {
      const auto it = b[i].values.find(k);
      if (it == b[i].values.end()) {
        throw std::invalid_argument("compare: metric '" + k + "' missing from b at step " + std::to_string(a[i].step));
      }
      delta[k] = it->second - va;
      if (std::isfinite(delta[k])) report.max_abs_delta = std::max(report.max_abs_delta, std::abs(delta[k]));
    }
    for (const auto& [k, vb] : b[i].values) {
      if (!a[i].values.contains(k)) {
        throw std::invalid_argument("compare: metric '" + k + "' missing from a at step " + std::to_string(a[i].step));
      }
    }
    report.steps.push_back(a[i].step);
    report.deltas.push_back(std::move(delta));
  }
  for (const auto& [k, va] : a.back().values) {
    const double vb = b.back().values.at(k);
    report.final_values.push_back({k, va, vb, vb - va});
  }
  return report;
}

std::string render_table(const CompareReport& report) {
  std::size_t width = 6;
  for (const auto& f : report.final_values) width = std::max(width, f.metric.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "final step %lld\n", static_cast<long long>(report.steps.back()));
  out += buf;
  std::snprintf(buf, sizeof buf, "%-*s %14s %14s %14s\n", static_cast<int>(width), "metric", "a", "b", "b - a");
  out += buf;
  for (const auto& f : report.final_values) {
    std::snprintf(buf, sizeof buf, "%-*s %14.6g %14.6g %+14.6g\n", static_cast<int>(width), f.metric.c_str(), f.a,
                  f.b, f.delta);
    out += buf;
  }
  return out;
}

}  // namespace laver
