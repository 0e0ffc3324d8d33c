#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "laver/synth.hpp"
#include "laver/tensor_io.hpp"

using namespace laver;

TEST_CASE("color prototypes are distinct cube corners") {
  for (std::size_t c = 0; c < 8; ++c) {
    const auto p = color_prototype(c, 3);
    REQUIRE(p.size() == 3);
    for (std::size_t k = 0; k < 3; ++k) CHECK(p[k] == float((c >> k) & 1u));
  }
  CHECK(color_prototype(5, 3) == std::vector<float>{1, 0, 1});
}

TEST_CASE("noise 0 renders each cell as its prototype") {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  cfg.grid_rows = 3;
  cfg.grid_cols = 2;
  cfg.patch_size = 2;
  Rng rng(1);
  for (const Sample& s : generate(rng, cfg, 10)) {
    REQUIRE(s.pixels.shape() == std::vector<std::size_t>{6, 4, 3});
    REQUIRE(s.cell_colors.size() == 6);
    for (std::size_t y = 0; y < 6; ++y)
      for (std::size_t x = 0; x < 4; ++x) {
        const auto proto = color_prototype(std::size_t(s.cell_colors[(y / 2) * 2 + x / 2]), 3);
        for (std::size_t ch = 0; ch < 3; ++ch) CHECK(s.pixels[(y * 4 + x) * 3 + ch] == proto[ch]);
      }
    CHECK(s.prompt == std::vector<int>{vocab::color_kw, vocab::at_kw, vocab::digit(s.query_row), vocab::digit(s.query_col)});
    CHECK(s.answer == vocab::color(std::size_t(s.cell_colors[s.query_row * 2 + s.query_col])));
    CHECK(oracle_answer(s, cfg) == s.answer);
  }
}

TEST_CASE("noisy pixels stay in [0, 1] and the oracle is exact at the default noise") {
  SynthConfig cfg;
  Rng rng(2);
  std::size_t correct = 0;
  const auto samples = generate(rng, cfg, 200);
  for (const Sample& s : samples) {
    for (float v : s.pixels.values()) REQUIRE((v >= 0.0f && v <= 1.0f));
    correct += oracle_answer(s, cfg) == s.answer;
  }
  CHECK(correct == samples.size());
}

TEST_CASE("generation is deterministic for a seed") {
  SynthConfig cfg;
  Rng a(3), b(3), c(4);
  const auto sa = generate(a, cfg, 5), sb = generate(b, cfg, 5), sc = generate(c, cfg, 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(sa[i].pixels == sb[i].pixels);
    CHECK(sa[i].prompt == sb[i].prompt);
  }
  CHECK_FALSE(sa[0].pixels == sc[0].pixels);
}

TEST_CASE("answer and query marginals are roughly uniform") {
  SynthConfig cfg;
  cfg.noise_std = 0.0;
  Rng rng(5);
  std::vector<int> answers(cfg.colors, 0), rows(cfg.grid_rows, 0);
  const std::size_t n = 4000;
  for (const Sample& s : generate(rng, cfg, n)) {
    ++answers[std::size_t(s.answer - vocab::color0)];
    ++rows[s.query_row];
  }
  // Expected 500 each; 5 sigma is about 105.
  for (int count : answers) CHECK(std::abs(count - 500) < 105);
  for (int count : rows) CHECK(std::abs(count - 500) < 105);
}

TEST_CASE("synth config validation") {
  SynthConfig cfg;
  cfg.validate();
  cfg.colors = 9;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.grid_rows = 11;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.noise_std = -0.1;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.vocab_size = 20;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = SynthConfig{};
  cfg.patch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dump_corpus writes tensors and an index") {
  SynthConfig cfg;
  cfg.grid_rows = 2;
  cfg.grid_cols = 2;
  Rng rng(6);
  const auto samples = generate(rng, cfg, 3);
  const auto dir = std::filesystem::temp_directory_path() / "laver_test_synth";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  dump_corpus(samples, dir);
  const Tensor answers = load_lvtd(dir / "answers.lvtd");
  REQUIRE(answers.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(answers[i] == float(samples[i].answer));
  CHECK(load_lvtd(dir / "pixels.lvtd").shape() == std::vector<std::size_t>{3, 8, 8, 3});
  std::ifstream index(dir / "index.jsonl");
  std::string line;
  std::size_t lines = 0;
  while (std::getline(index, line)) ++lines;
  CHECK(lines == 3);
  CHECK_THROWS_AS(dump_corpus({}, dir), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
