#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

#include "laver/rng.hpp"
#include "laver/tensor.hpp"

namespace laver {

// Fixed toy vocabulary: specials, the two query keywords, digits 0-9, then colors.
namespace vocab {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int color_kw = 2;
inline constexpr int at_kw = 3;
inline constexpr int digit0 = 4;
inline constexpr int color0 = 14;

inline constexpr int digit(std::size_t d) { return digit0 + static_cast<int>(d); }
inline constexpr int color(std::size_t c) { return color0 + static_cast<int>(c); }
}  // namespace vocab

struct SynthConfig {
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  std::size_t patch_size = 4;
  std::size_t channels = 3;
  std::size_t colors = 8;
  double noise_std = 0.05;
  std::size_t vocab_size = 32;

  void validate() const;
};

/// One image plus the query "COLOR AT r c" and its answer token.
struct Sample {
  Tensor pixels;            // [rows·p, cols·p, ch]
  std::vector<int> prompt;  // COLOR AT digit(r) digit(c)
  int answer = 0;           // color token of cell (r, c)
  std::size_t prompt_len = 4;
  std::size_t query_row = 0;
  std::size_t query_col = 0;
  std::vector<int> cell_colors;  // raster order, color index (not token)
};

/// Color c is rendered with channel k at bit k of c, i.e. a corner of the unit cube.
std::vector<float> color_prototype(std::size_t color, std::size_t channels);

/// Draws `count` samples. Cell colors and the query cell are uniform; pixels
/// are the prototype plus Gaussian(noise_std) noise clamped to [0, 1].
std::vector<Sample> generate(Rng& rng, const SynthConfig& config, std::size_t count);

/// Nearest-prototype answer read from the pixels of the queried cell.
int oracle_answer(const Sample& sample, const SynthConfig& config);

/// Writes pixels/answers/queries as LVTD tensors plus an index.jsonl.
void dump_corpus(const std::vector<Sample>& samples, const std::filesystem::path& dir);

}  // namespace laver
