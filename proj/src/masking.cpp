#include "laver/masking.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace laver {

const char* to_string(ScheduleKind kind) {
  return kind == ScheduleKind::constant ? "constant" : "cosine";
}

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "constant") return ScheduleKind::constant;
  if (s == "cosine") return ScheduleKind::cosine;
  throw std::invalid_argument("unknown schedule kind '" + s + "'");
}

std::size_t MaskPlan::masked_count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

double ratio_at(const MaskSchedule& schedule, std::int64_t step) {
  if (schedule.total_steps <= 0) throw std::invalid_argument("ratio_at: total_steps must be positive");
  if (step < 0 || step > schedule.total_steps) {
    throw std::invalid_argument("ratio_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(schedule.total_steps) + "]");
  }
  if (schedule.kind == ScheduleKind::constant) return schedule.target_ratio;
  if (step == schedule.total_steps) return schedule.target_ratio;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(schedule.total_steps);
  return schedule.target_ratio * 0.5 * (1.0 - std::cos(phase));
}

MaskPlan draw_mask(Rng& rng, std::size_t n_tokens, double ratio, int image_id) {
  if (n_tokens == 0) throw std::invalid_argument("draw_mask: n_tokens must be positive");
  if (!(ratio >= 0.0 && ratio <= 1.0)) {
    throw std::invalid_argument("draw_mask: ratio must lie in [0, 1]");
  }
  MaskPlan plan;
  plan.mask.resize(n_tokens);
  plan.ratio_used = ratio;
  plan.image_id = image_id;
  for (std::size_t i = 0; i < n_tokens; ++i) plan.mask[i] = rng.bernoulli(ratio);
  return plan;
}

Tensor apply_mask(const Tensor& vision_tokens, const MaskPlan& plan, const Tensor& mask_embedding) {
  if (vision_tokens.rank() != 2) throw std::invalid_argument("apply_mask: tokens must be [N, D]");
  if (plan.mask.size() != vision_tokens.rows()) {
    throw std::invalid_argument("apply_mask: plan covers " + std::to_string(plan.mask.size()) +
                                " tokens, image has " + std::to_string(vision_tokens.rows()));
  }
  if (mask_embedding.size() != vision_tokens.cols()) {
    throw std::invalid_argument("apply_mask: mask embedding width mismatch");
  }
  Tensor out = vision_tokens;
  for (std::size_t i = 0; i < plan.mask.size(); ++i) {
    if (!plan.mask[i]) continue;
    auto r = out.row(i);
    std::copy(mask_embedding.values().begin(), mask_embedding.values().end(), r.begin());
  }
  return out;
}

}  // namespace laver
