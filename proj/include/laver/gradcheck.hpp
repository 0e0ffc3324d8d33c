#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace laver {

struct GradCheckConfig {
  std::size_t seeds = 5;
  std::size_t rows = 4;   // tokens per check
  std::size_t dim = 8;    // logit width
  double step = 1e-3;     // central-difference half step
  double tolerance = 1e-4;
  std::uint64_t seed = 1;
  bool model_level = true;        // also push each loss through a tiny model
  double model_step = 1e-4;       // length of the parameter-space displacement
  double model_tolerance = 1e-3;  // float32 forward passes limit attainable agreement
};

struct GradCheckEntry {
  std::string loss;   // lm | mim | ga | cga
  std::string scope;  // "logits" (64-bit losses) or "model" (end-to-end, float32 carrier)
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t checked = 0;
  std::vector<std::string> excluded;  // CGA entries whose perturbation crosses the clip
  bool pass = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool zero_perturbation_identical = false;
  bool pass() const;
};

/// Logit-level check: for every entry of the student input, compares the
/// analytic gradient with (L(x+h) − L(x−h)) / (x+h − (x−h)). The error of one
/// seed is max |analytic − numeric| / max |numeric|; the report keeps the
/// worst seed. Model-level check: compares the directional derivative along
/// the analytic gradient and along random directions on a 16-wide model.
GradCheckReport grad_check(const GradCheckConfig& config);

}  // namespace laver
