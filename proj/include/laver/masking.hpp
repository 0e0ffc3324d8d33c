#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "laver/rng.hpp"
#include "laver/tensor.hpp"

namespace laver {

enum class ScheduleKind { constant, cosine };

const char* to_string(ScheduleKind kind);
ScheduleKind schedule_kind_from_string(const std::string& s);

struct MaskSchedule {
  ScheduleKind kind = ScheduleKind::cosine;
  double target_ratio = 0.05;
  std::int64_t total_steps = 2000;
};

/// Per-image vision-token mask. mask[i] == true replaces token i with the mask embedding.
struct MaskPlan {
  std::vector<bool> mask;
  double ratio_used = 0.0;
  int image_id = 0;

  std::size_t masked_count() const;
};

/// Masking ratio at `step` in [0, total_steps]. The cosine kind ramps from 0
/// up to target_ratio as target · ½(1 − cos(π·step/total)).
double ratio_at(const MaskSchedule& schedule, std::int64_t step);

/// Bernoulli(ratio) draw for each of n_tokens positions.
MaskPlan draw_mask(Rng& rng, std::size_t n_tokens, double ratio, int image_id = 0);

/// Row i becomes mask_embedding where plan.mask[i], otherwise stays as is.
Tensor apply_mask(const Tensor& vision_tokens, const MaskPlan& plan, const Tensor& mask_embedding);

}  // namespace laver
