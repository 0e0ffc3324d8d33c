#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "laver/diagnostics.hpp"
#include "laver/rng.hpp"
#include "oracles.hpp"

using namespace laver;

namespace {

Tensor rows(std::initializer_list<std::initializer_list<float>> r) {
  Tensor t({r.size(), r.begin()->size()});
  std::size_t k = 0;
  for (const auto& row : r)
    for (float v : row) t[k++] = v;
  return t;
}

}  // namespace

TEST_CASE("mean pairwise cosine: hand cases") {
  CHECK(mean_pairwise_cosine(rows({{1, 0}, {0, 1}})) == doctest::Approx(0.0).scale(1.0));
  CHECK(mean_pairwise_cosine(rows({{1, 2}, {2, 4}, {3, 6}})) == doctest::Approx(1.0));
  CHECK(mean_pairwise_cosine(rows({{1, 0}, {-1, 0}})) == doctest::Approx(-1.0));
  // cos = 0.6, 0, 0.8 over the three pairs
  CHECK(mean_pairwise_cosine(rows({{1, 0}, {0.6f, 0.8f}, {0, 1}})) == doctest::Approx(1.4 / 3.0));
  CHECK_THROWS_AS(mean_pairwise_cosine(rows({{1, 0}})), std::invalid_argument);
  CHECK_THROWS_AS(mean_pairwise_cosine(rows({{1, 0}, {0, 0}})), std::invalid_argument);
}

TEST_CASE("mean pairwise cosine matches the pairwise loop") {
  Rng rng(1);
  const Tensor x = sample_gaussian(rng, {9, 5}, 1.0);
  double s = 0.0;
  int pairs = 0;
  for (std::size_t i = 0; i < 9; ++i)
    for (std::size_t j = i + 1; j < 9; ++j) {
      double d = 0, ni = 0, nj = 0;
      for (std::size_t c = 0; c < 5; ++c) {
        d += double(x(i, c)) * x(j, c);
        ni += double(x(i, c)) * x(i, c);
        nj += double(x(j, c)) * x(j, c);
      }
      s += d / std::sqrt(ni * nj);
      ++pairs;
    }
  CHECK(mean_pairwise_cosine(x) == doctest::Approx(s / pairs).epsilon(1e-9));
}

TEST_CASE("attention allocation: half the mass on vision gives 0.5") {
  ForwardTrace tr;
  Tensor a({1, 3, 3});
  // query 2 spreads 0.25 / 0.25 / 0.5 over positions 0, 1, 2
  a[2 * 3 + 0] = 0.25f;
  a[2 * 3 + 1] = 0.25f;
  a[2 * 3 + 2] = 0.5f;
  tr.attention.push_back(a);
  const std::vector<std::size_t> vision{0, 1}, query{2};
  const auto out = attention_allocation(tr, vision, query);
  REQUIRE(out.size() == 1);
  CHECK(out[0] == 0.5);

  Tensor two({2, 3, 3});
  two[2 * 3 + 0] = 1.0f;
  two[(3 + 2) * 3 + 2] = 1.0f;
  tr.attention = {two};
  CHECK(attention_allocation(tr, vision, query)[0] == 0.5);
  CHECK_THROWS_AS(attention_allocation(tr, vision, std::vector<std::size_t>{}), std::invalid_argument);
  CHECK_THROWS_AS(attention_allocation(tr, std::vector<std::size_t>{5}, query), std::invalid_argument);
}

TEST_CASE("hsic matches the explicit double sum") {
  Rng rng(2);
  const Tensor k = linear_kernel(sample_gaussian(rng, {6, 3}, 1.0));
  const Tensor l = linear_kernel(sample_gaussian(rng, {6, 4}, 1.0));
  const std::size_t n = 6;
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double mk = 0.0, ml = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      mk += k(i, j);
      ml += l(i, j);
    }
    for (std::size_t j = 0; j < n; ++j) s += (k(i, j) - mk / n) * (l(i, j) - ml / n);
  }
  CHECK(hsic(k, l) == doctest::Approx(s / 25.0).epsilon(1e-10));
  CHECK_THROWS_AS(hsic(k, Tensor({5, 5})), std::invalid_argument);
  CHECK_THROWS_AS(hsic(rows({{1, 2}, {3, 4}}), rows({{1, 2}, {2, 4}})), std::invalid_argument);
}

TEST_CASE("cka: self alignment is one and scale invariant") {
  Rng rng(3);
  const Tensor x = sample_gaussian(rng, {8, 4}, 1.0);
  Tensor x5 = x;
  for (auto& v : x5.values()) v *= 5.0f;
  const Tensor k = linear_kernel(x), k5 = linear_kernel(x5);
  CHECK(cka(k, k) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(cka(k, k5) == doctest::Approx(1.0).epsilon(1e-6));
  const Tensor other = linear_kernel(sample_gaussian(rng, {8, 4}, 1.0));
  CHECK(std::abs(cka(k, other)) <= 1.0);
  Tensor flat({3, 3});
  flat.fill(2.0f);
  CHECK_THROWS_AS(cka(flat, flat), std::invalid_argument);
}

TEST_CASE("knn_of: largest entries, self excluded, ties to lower index") {
  const Tensor k = rows({{9, 1, 3, 3}, {1, 9, 0, 0}, {3, 0, 9, 5}, {3, 0, 5, 9}});
  CHECK(knn_of(k, 0, 1) == std::vector<std::size_t>{2});
  CHECK(knn_of(k, 0, 2) == std::vector<std::size_t>{2, 3});
  CHECK(knn_of(k, 1, 1) == std::vector<std::size_t>{0});
  CHECK(knn_of(k, 1, 2) == std::vector<std::size_t>{0, 2});
  CHECK_THROWS_AS(knn_of(k, 0, 4), std::invalid_argument);
  CHECK_THROWS_AS(knn_of(k, 4, 1), std::invalid_argument);
}

TEST_CASE("cknna equals the exhaustive brute force") {
  Rng rng(4);
  std::size_t compared = 0;
  for (std::size_t n : {4u, 6u, 8u}) {
    for (std::size_t k = 1; k < n; ++k) {
      for (int trial = 0; trial < 20; ++trial) {
        const Tensor a = sample_gaussian(rng, {n, 3}, 1.0), b = sample_gaussian(rng, {n, 5}, 1.0);
        double fast = 0.0;
        try {
          fast = cknna(a, b, k);
        } catch (const std::invalid_argument&) {
          continue;  // degenerate neighbor set, brute force would divide by zero too
        }
        CHECK(std::abs(fast - oracle::cknna(a, b, k)) <= 1e-8);
        ++compared;
      }
    }
  }
  CHECK(compared == 300);
}

TEST_CASE("cknna: identical features align perfectly; bad k rejected") {
  Rng rng(5);
  const Tensor x = sample_gaussian(rng, {8, 4}, 1.0);
  CHECK(cknna(x, x, 3) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(cknna(x, x, 0), std::invalid_argument);
  CHECK_THROWS_AS(cknna(x, x, 8), std::invalid_argument);
  CHECK_THROWS_AS(cknna(x, sample_gaussian(rng, {7, 4}, 1.0), 3), std::invalid_argument);
}

TEST_CASE("pca_rgb: three orthogonal patterns recovered in order") {
  // Centered orthogonal patterns over a 2x2 grid, scaled 3, 2, 1 along e1, e2, e3 of R^4, plus an offset.
  const float a[4] = {1, 1, -1, -1}, b[4] = {1, -1, 1, -1}, c[4] = {1, -1, -1, 1};
  Tensor x({4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = 3 * a[i] + 10;
    x(i, 1) = 2 * b[i] - 4;
    x(i, 2) = c[i];
    x(i, 3) = 7;
  }
  const PcaResult p = pca_rgb(x, 2, 2);
  REQUIRE(p.eigenvalues.size() == 3);
  CHECK(p.eigenvalues[0] == doctest::Approx(12.0));
  CHECK(p.eigenvalues[1] == doctest::Approx(16.0 / 3.0));
  CHECK(p.eigenvalues[2] == doctest::Approx(4.0 / 3.0));
  for (std::size_t comp = 0; comp < 3; ++comp)
    for (std::size_t j = 0; j < 4; ++j) CHECK(p.components(comp, j) == doctest::Approx(comp == j ? 1.0 : 0.0).scale(1.0));
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(p.projected(i, 0) == doctest::Approx(3 * a[i]));
    CHECK(p.projected(i, 1) == doctest::Approx(2 * b[i]));
    CHECK(p.projected(i, 2) == doctest::Approx(c[i]));
    CHECK(p.image.pixels[i * 3 + 0] == (a[i] > 0 ? 255 : 0));
    CHECK(p.image.pixels[i * 3 + 1] == (b[i] > 0 ? 255 : 0));
    CHECK(p.image.pixels[i * 3 + 2] == (c[i] > 0 ? 255 : 0));
  }
}

TEST_CASE("pca_rgb: rejects rank below three and grid mismatch") {
  Tensor x({4, 4});
  for (std::size_t i = 0; i < 4; ++i) {
    x(i, 0) = float(i);
    x(i, 1) = float(i * i);
  }
  CHECK_THROWS_AS(pca_rgb(x, 2, 2), std::invalid_argument);
  CHECK_THROWS_AS(pca_rgb(Tensor({4, 4}), 2, 2), std::invalid_argument);
  Rng rng(6);
  CHECK_THROWS_AS(pca_rgb(sample_gaussian(rng, {6, 4}, 1.0), 2, 2), std::invalid_argument);
}

TEST_CASE("image writers emit binary netpbm") {
  const auto dir = std::filesystem::temp_directory_path() / "laver_test_diag";
  std::filesystem::create_directories(dir);
  RgbImage img{1, 2, {1, 2, 3, 4, 5, 6}};
  write_ppm(dir / "a.ppm", img);
  std::ifstream in(dir / "a.ppm", std::ios::binary);
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  CHECK(bytes == std::string("P6\n2 1\n255\n\x01\x02\x03\x04\x05\x06", 17));
  const auto grey = to_grey(rows({{-1, 0}, {1, 3}}), -1.0, 1.0);
  CHECK(grey == std::vector<std::uint8_t>{0, 128, 255, 255});
  write_pgm(dir / "g.pgm", 2, 2, grey);
  CHECK(std::filesystem::file_size(dir / "g.pgm") == 11 + 4);
  CHECK_THROWS_AS(write_pgm(dir / "g.pgm", 3, 2, grey), std::invalid_argument);
  CHECK_THROWS_AS(to_grey(Tensor({1}), 1.0, 1.0), std::invalid_argument);
  std::filesystem::remove_all(dir);
}
