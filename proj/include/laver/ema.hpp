#pragma once

#include <cstdint>
#include <string>

#include "laver/model.hpp"

namespace laver {

enum class EmaSchedule { constant, cosine_to_one };

const char* to_string(EmaSchedule s);
EmaSchedule ema_schedule_from_string(const std::string& s);

struct EmaConfig {
  double decay = 0.95;
  EmaSchedule schedule = EmaSchedule::cosine_to_one;
  std::int64_t update_every = 100;  // optimizer steps between teacher updates
  std::int64_t total_steps = 2000;

  void validate() const;
};

/// Gradient-free teacher copy. Backbone, embeddings and both heads follow the
/// student by EMA; the connector is copied verbatim at every update so the
/// teacher keeps reading the student's current token space.
struct TeacherState {
  ModelParams params;
  std::int64_t last_update_step = 0;
};

TeacherState init_teacher(const ModelParams& student);

/// λ at `step`: constant, or λ₀ + (1 − λ₀)·½(1 − cos(π·step/total)).
double decay_at(const EmaConfig& cfg, std::int64_t step);

/// λ·teacher + (1 − λ)·student, evaluated in 64 bits.
inline double ema_blend(double teacher, double student, double decay) {
  return decay * teacher + (1.0 - decay) * student;
}

/// Applies the EMA update when at least update_every steps have passed since
/// the last one. Returns true if the teacher changed its update stamp.
bool maybe_update(TeacherState& teacher, const ModelParams& student, const EmaConfig& cfg,
                  std::int64_t step);

}  // namespace laver
