#include "laver/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace laver {

const char* to_string(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline: return "baseline";
    case TrainMode::mim_only: return "mim_only";
    case TrainMode::mim_ga: return "mim_ga";
    case TrainMode::laver: return "laver";
  }
  return "?";
}

TrainMode train_mode_from_string(const std::string& s) {
  if (s == "baseline") return TrainMode::baseline;
  if (s == "mim_only") return TrainMode::mim_only;
  if (s == "mim_ga") return TrainMode::mim_ga;
  if (s == "laver") return TrainMode::laver;
  throw std::invalid_argument("unknown mode '" + s + "' (baseline|mim_only|mim_ga|laver)");
}

ActiveTerms active_terms(TrainMode mode) {
  switch (mode) {
    case TrainMode::baseline: return {true, false, false, false};
    case TrainMode::mim_only: return {true, true, false, false};
    case TrainMode::mim_ga: return {true, true, true, false};
    case TrainMode::laver: return {true, true, false, true};
  }
  return {};
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc{} || res.ptr != end) {
    throw std::invalid_argument("bad value '" + value + "' for " + key);
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw std::invalid_argument("bad boolean '" + value + "' for " + key);
}

struct Field {
  std::string key;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, const std::string&)> set;
};

template <typename T>
Field number(std::string key, T TrainConfig::*member) {
  return {key, [member](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](TrainConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

template <typename S, typename T>
Field nested(std::string key, S TrainConfig::*outer, T S::*inner) {
  return {key, [outer, inner](const TrainConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*outer.*inner);
            else return std::to_string(c.*outer.*inner);
          },
          [outer, inner, key](TrainConfig& c, const std::string& v) {
            c.*outer.*inner = parse_number<T>(key, v);
          }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"mode", [](const TrainConfig& c) { return std::string(to_string(c.mode)); },
       [](TrainConfig& c, const std::string& v) { c.mode = train_mode_from_string(v); }},
      number("seed", &TrainConfig::seed),
      number("steps", &TrainConfig::steps),
      number("batch_size", &TrainConfig::batch_size),
      number("pack_images", &TrainConfig::pack_images),
      number("log_every", &TrainConfig::log_every),
      number("diag_every", &TrainConfig::diag_every),
      number("probe_count", &TrainConfig::probe_count),
      number("probe_seed", &TrainConfig::probe_seed),
      number("eval_count", &TrainConfig::eval_count),
      {"wall_clock", [](const TrainConfig& c) { return std::string(c.wall_clock ? "true" : "false"); },
       [](TrainConfig& c, const std::string& v) { c.wall_clock = parse_bool("wall_clock", v); }},
      nested("model.layers", &TrainConfig::model, &ModelConfig::n_layers),
      nested("model.d_model", &TrainConfig::model, &ModelConfig::d_model),
      nested("model.heads", &TrainConfig::model, &ModelConfig::n_heads),
      nested("model.vocab", &TrainConfig::model, &ModelConfig::vocab_size),
      nested("model.visual_logit_dim", &TrainConfig::model, &ModelConfig::visual_logit_dim),
      nested("model.vision_head_hidden", &TrainConfig::model, &ModelConfig::vision_head_hidden),
      nested("model.patch", &TrainConfig::model, &ModelConfig::patch_size),
      nested("model.grid_rows", &TrainConfig::model, &ModelConfig::grid_rows),
      nested("model.grid_cols", &TrainConfig::model, &ModelConfig::grid_cols),
      nested("model.channels", &TrainConfig::model, &ModelConfig::channels),
      nested("model.rope_base", &TrainConfig::model, &ModelConfig::rope_base),
      nested("model.init_std", &TrainConfig::model, &ModelConfig::init_std),
      number("data.colors", &TrainConfig::colors),
      number("data.noise_std", &TrainConfig::noise_std),
      {"mask.schedule", [](const TrainConfig& c) { return std::string(to_string(c.mask.kind)); },
       [](TrainConfig& c, const std::string& v) { c.mask.kind = schedule_kind_from_string(v); }},
      nested("mask.ratio", &TrainConfig::mask, &MaskSchedule::target_ratio),
      nested("ema.decay", &TrainConfig::ema, &EmaConfig::decay),
      {"ema.schedule", [](const TrainConfig& c) { return std::string(to_string(c.ema.schedule)); },
       [](TrainConfig& c, const std::string& v) { c.ema.schedule = ema_schedule_from_string(v); }},
      nested("ema.update_every", &TrainConfig::ema, &EmaConfig::update_every),
      nested("loss.w_mim", &TrainConfig::weights, &LossWeights::mim),
      nested("loss.w_cga", &TrainConfig::weights, &LossWeights::cga),
      nested("loss.tau_teacher", &TrainConfig::temps, &Temperatures::teacher),
      nested("loss.tau_student", &TrainConfig::temps, &Temperatures::student),
      nested("optim.lr", &TrainConfig::optim, &OptimizerConfig::lr),
      nested("optim.beta1", &TrainConfig::optim, &OptimizerConfig::beta1),
      nested("optim.beta2", &TrainConfig::optim, &OptimizerConfig::beta2),
      nested("optim.eps", &TrainConfig::optim, &OptimizerConfig::eps),
      nested("optim.weight_decay", &TrainConfig::optim, &OptimizerConfig::weight_decay),
      nested("optim.warmup_ratio", &TrainConfig::optim, &OptimizerConfig::warmup_ratio),
  };
  return table;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void TrainConfig::finalize() {
  if (steps < 0) throw std::invalid_argument("steps must be nonnegative");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (pack_images < 1) throw std::invalid_argument("pack_images must be >= 1");
  if (log_every < 1) throw std::invalid_argument("log_every must be >= 1");
  if (diag_every < 1) throw std::invalid_argument("diag_every must be >= 1");
  if (probe_count < 1) throw std::invalid_argument("probe_count must be >= 1");
  if (!(optim.lr >= 0.0)) throw std::invalid_argument("optim.lr must be nonnegative");
  if (!(optim.beta1 >= 0.0 && optim.beta1 < 1.0) || !(optim.beta2 >= 0.0 && optim.beta2 < 1.0)) {
    throw std::invalid_argument("optimizer betas must lie in [0, 1)");
  }
  if (!(optim.eps > 0.0)) throw std::invalid_argument("optim.eps must be positive");
  if (!(optim.warmup_ratio >= 0.0 && optim.warmup_ratio <= 1.0)) {
    throw std::invalid_argument("optim.warmup_ratio must lie in [0, 1]");
  }
  if (!(mask.target_ratio >= 0.0 && mask.target_ratio <= 1.0)) {
    throw std::invalid_argument("mask.ratio must lie in [0, 1]");
  }
  if (weights.mim < 0.0 || weights.cga < 0.0) throw std::invalid_argument("loss weights must be nonnegative");
  if (!(temps.teacher > 0.0) || !(temps.student > 0.0)) {
    throw std::invalid_argument("temperatures must be positive");
  }
  const std::int64_t horizon = std::max<std::int64_t>(steps, 1);
  mask.total_steps = horizon;
  ema.total_steps = horizon;
  ema.validate();
  model.validate();
  synth().validate();
}

SynthConfig TrainConfig::synth() const {
  SynthConfig s;
  s.grid_rows = model.grid_rows;
  s.grid_cols = model.grid_cols;
  s.patch_size = model.patch_size;
  s.channels = model.channels;
  s.colors = colors;
  s.noise_std = noise_std;
  s.vocab_size = model.vocab_size;
  return s;
}

TrainConfig parse_config(const std::string& text, TrainConfig base) {
  std::istringstream in(text);
  std::string line;
  std::set<std::string> seen;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const Field* field = nullptr;
    for (const auto& f : fields()) {
      if (f.key == key) field = &f;
    }
    if (field == nullptr) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": unknown key '" + key + "'");
    }
    if (!seen.insert(key).second) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": repeated key '" + key + "'");
    }
    try {
      field->set(base, value);
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument("config line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  base.finalize();
  return base;
}

TrainConfig load_config(const std::filesystem::path& path, TrainConfig base) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string to_text(const TrainConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

}  // namespace laver
