#include "laver/synth.hpp"

#include <algorithm>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "laver/tensor_io.hpp"

namespace laver {

void SynthConfig::validate() const {
  if (colors < 2) throw std::invalid_argument("synth: need at least 2 colors");
  if (static_cast<std::size_t>(vocab::color0) + colors > vocab_size) {
    throw std::invalid_argument("synth: " + std::to_string(colors) +
                                " colors exceed the vocabulary capacity of " +
                                std::to_string(vocab_size - vocab::color0));
  }
  if (channels >= 32 || colors > (std::size_t{1} << channels)) {
    throw std::invalid_argument("synth: " + std::to_string(channels) + " channels can render at most " +
                                std::to_string(std::size_t{1} << std::min<std::size_t>(channels, 31)) +
                                " colors");
  }
  if (grid_rows == 0 || grid_cols == 0 || grid_rows > 10 || grid_cols > 10) {
    throw std::invalid_argument("synth: grid extents must lie in 1..10 (single-digit queries)");
  }
  if (patch_size == 0) throw std::invalid_argument("synth: patch size must be positive");
  if (noise_std < 0.0) throw std::invalid_argument("synth: noise_std must be nonnegative");
}

std::vector<float> color_prototype(std::size_t color, std::size_t channels) {
  std::vector<float> rgb(channels);
  for (std::size_t k = 0; k < channels; ++k) rgb[k] = ((color >> k) & 1u) ? 1.0f : 0.0f;
  return rgb;
}

std::vector<Sample> generate(Rng& rng, const SynthConfig& config, std::size_t count) {
  config.validate();
  const std::size_t p = config.patch_size, ch = config.channels;
  const std::size_t h = config.grid_rows * p, w = config.grid_cols * p;
  const std::size_t cells = config.grid_rows * config.grid_cols;
  std::vector<Sample> out;
  out.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Sample s;
    s.cell_colors.resize(cells);
    for (auto& c : s.cell_colors) c = static_cast<int>(rng.uniform_int(config.colors));
    s.pixels = Tensor({h, w, ch});
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t cell = (y / p) * config.grid_cols + x / p;
        const auto proto = color_prototype(static_cast<std::size_t>(s.cell_colors[cell]), ch);
        for (std::size_t k = 0; k < ch; ++k) {
          float v = proto[k];
          if (config.noise_std > 0.0) {
            v += static_cast<float>(rng.normal() * config.noise_std);
            v = std::clamp(v, 0.0f, 1.0f);
          }
          s.pixels[(y * w + x) * ch + k] = v;
        }
      }
    }
    s.query_row = rng.uniform_int(config.grid_rows);
    s.query_col = rng.uniform_int(config.grid_cols);
    s.prompt = {vocab::color_kw, vocab::at_kw, vocab::digit(s.query_row), vocab::digit(s.query_col)};
    s.prompt_len = s.prompt.size();
    s.answer = vocab::color(
        static_cast<std::size_t>(s.cell_colors[s.query_row * config.grid_cols + s.query_col]));
    out.push_back(std::move(s));
  }
  return out;
}

int oracle_answer(const Sample& sample, const SynthConfig& config) {
  const std::size_t p = config.patch_size, ch = config.channels;
  const std::size_t w = config.grid_cols * p;
  std::vector<double> mean(ch, 0.0);
  for (std::size_t py = 0; py < p; ++py) {
    for (std::size_t px = 0; px < p; ++px) {
      const std::size_t y = sample.query_row * p + py, x = sample.query_col * p + px;
      for (std::size_t k = 0; k < ch; ++k) mean[k] += sample.pixels[(y * w + x) * ch + k];
    }
  }
  for (auto& m : mean) m /= static_cast<double>(p * p);
  std::size_t best = 0;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < config.colors; ++c) {
    const auto proto = color_prototype(c, ch);
    double dist = 0.0;
    for (std::size_t k = 0; k < ch; ++k) dist += (mean[k] - proto[k]) * (mean[k] - proto[k]);
    if (dist < best_dist) {
      best_dist = dist;
      best = c;
    }
  }
  return vocab::color(best);
}

void dump_corpus(const std::vector<Sample>& samples, const std::filesystem::path& dir) {
  if (samples.empty()) throw std::invalid_argument("dump_corpus: no samples");
  std::filesystem::create_directories(dir);
  const auto& shape0 = samples.front().pixels.shape();
  std::vector<std::size_t> shape{samples.size()};
  shape.insert(shape.end(), shape0.begin(), shape0.end());
  Tensor pixels(shape);
  Tensor answers({samples.size()});
  Tensor prompts({samples.size(), samples.front().prompt.size()});
  const std::size_t per = samples.front().pixels.size();
  std::ofstream index(dir / "index.jsonl");
  if (!index) throw std::runtime_error("cannot write " + (dir / "index.jsonl").string());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    std::copy(s.pixels.values().begin(), s.pixels.values().end(), pixels.data() + i * per);
    answers[i] = static_cast<float>(s.answer);
    for (std::size_t j = 0; j < s.prompt.size(); ++j) prompts(i, j) = static_cast<float>(s.prompt[j]);
    nlohmann::json line = {{"index", i},         {"query_row", s.query_row},
                           {"query_col", s.query_col}, {"answer", s.answer},
                           {"prompt", s.prompt}};
    index << line.dump() << '\n';
  }
  save_lvtd(dir / "pixels.lvtd", pixels);
  save_lvtd(dir / "answers.lvtd", answers);
  save_lvtd(dir / "prompts.lvtd", prompts);
}

}  // namespace laver
