#include "laver/ema.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace laver {

const char* to_string(EmaSchedule s) {
  return s == EmaSchedule::constant ? "constant" : "cosine";
}

EmaSchedule ema_schedule_from_string(const std::string& s) {
  if (s == "constant") return EmaSchedule::constant;
  if (s == "cosine" || s == "cosine_to_one") return EmaSchedule::cosine_to_one;
  throw std::invalid_argument("unknown EMA schedule '" + s + "'");
}

void EmaConfig::validate() const {
  if (!(decay >= 0.0 && decay <= 1.0)) throw std::invalid_argument("EMA decay must lie in [0, 1]");
  if (update_every < 1) throw std::invalid_argument("EMA update_every must be >= 1");
  if (total_steps < 1) throw std::invalid_argument("EMA total_steps must be >= 1");
}

TeacherState init_teacher(const ModelParams& student) { return TeacherState{student, 0}; }

double decay_at(const EmaConfig& cfg, std::int64_t step) {
  cfg.validate();
  if (step < 0 || step > cfg.total_steps) {
    throw std::invalid_argument("decay_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(cfg.total_steps) + "]");
  }
  if (cfg.schedule == EmaSchedule::constant) return cfg.decay;
  if (step == cfg.total_steps) return 1.0;
  const double phase = std::numbers::pi * static_cast<double>(step) /
                       static_cast<double>(cfg.total_steps);
  return cfg.decay + (1.0 - cfg.decay) * 0.5 * (1.0 - std::cos(phase));
}

bool maybe_update(TeacherState& teacher, const ModelParams& student, const EmaConfig& cfg,
                  std::int64_t step) {
  if (step < teacher.last_update_step) {
    throw std::invalid_argument("maybe_update: step moved backwards");
  }
  if (!same_structure(teacher.params, student)) {
    throw std::logic_error("maybe_update: teacher and student parameter layouts differ");
  }
  if (step - teacher.last_update_step < cfg.update_every) return false;

  const double decay = decay_at(cfg, step);
  std::vector<const Tensor*> src;
  student.visit([&](const std::string&, ParamGroup, const Tensor& t) { src.push_back(&t); });
  std::size_t k = 0;
  teacher.params.visit([&](const std::string&, ParamGroup group, Tensor& t) {
    const Tensor& s = *src[k++];
    if (group == ParamGroup::connector) {
      t = s;
      return;
    }
    for (std::size_t i = 0; i < t.size(); ++i) {
      t[i] = static_cast<float>(ema_blend(t[i], s[i], decay));
    }
  });
  teacher.last_update_step = step;
  return true;
}

}  // namespace laver
