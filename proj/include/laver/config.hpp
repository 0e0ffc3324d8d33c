#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "laver/ema.hpp"
#include "laver/masking.hpp"
#include "laver/model.hpp"
#include "laver/objectives.hpp"
#include "laver/synth.hpp"

namespace laver {

enum class TrainMode { baseline, mim_only, mim_ga, laver };

const char* to_string(TrainMode mode);
TrainMode train_mode_from_string(const std::string& s);

/// Which loss terms are switched on. Every training mode keeps LM on.
struct ActiveTerms {
  bool lm = true;
  bool mim = false;
  bool ga = false;
  bool cga = false;

  bool any_visual() const { return mim || ga || cga; }
};
ActiveTerms active_terms(TrainMode mode);

struct OptimizerConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  double warmup_ratio = 0.05;
};

struct TrainConfig {
  TrainMode mode = TrainMode::laver;
  std::uint64_t seed = 1;
  std::int64_t steps = 2000;
  std::size_t batch_size = 8;
  std::size_t pack_images = 2;
  std::int64_t log_every = 50;
  std::int64_t diag_every = 500;
  std::size_t probe_count = 64;
  std::uint64_t probe_seed = 9001;
  std::size_t eval_count = 256;
  bool wall_clock = false;  // adds wall_ms to metric lines; breaks byte-identical logs

  ModelConfig model;
  MaskSchedule mask;
  EmaConfig ema;
  LossWeights weights;
  Temperatures temps;
  OptimizerConfig optim;
  std::size_t colors = 8;
  double noise_std = 0.05;

  /// Copies `steps` into the mask and EMA schedules and validates everything.
  void finalize();
  SynthConfig synth() const;
};

/// Parses the flat key = value format. '#' starts a comment, blank lines are
/// skipped, unknown or repeated keys are rejected with their line number.
/// Keys not present keep the values already in `base`.
TrainConfig parse_config(const std::string& text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& path, TrainConfig base = {});

/// Serializes every key in a fixed order; parse_config(to_text(c)) == c.
std::string to_text(const TrainConfig& config);

}  // namespace laver
