#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "laver/model.hpp"
#include "laver/tensor.hpp"

namespace laver {

/// Mean of cos(v_i, v_j) over all pairs i < j. Needs N >= 2 and no zero rows.
double mean_pairwise_cosine(const Tensor& features);

/// mean_pairwise_cosine of the vision rows of every captured hidden state (L+1 entries).
std::vector<double> homogenization_profile(const ForwardTrace& trace,
                                           std::span<const std::size_t> vision_positions);

/// Per layer: fraction of each query's attention mass that lands on vision
/// positions, computed per head and then averaged over heads and queries.
std::vector<double> attention_allocation(const ForwardTrace& trace,
                                         std::span<const std::size_t> vision_positions,
                                         std::span<const std::size_t> query_positions);

/// Linear (inner-product) kernel X·Xᵀ in 64 bits, returned as float.
Tensor linear_kernel(const Tensor& features);

/// (1/(N−1)²) Σ_ij (K_ij − E_i[K]) (L_ij − E_i[L]) where E_i is the mean of row i.
double hsic(const Tensor& k, const Tensor& l);
/// hsic(K, L) / sqrt(hsic(K, K) · hsic(L, L)). Rejects a kernel with no centered variance.
double cka(const Tensor& k, const Tensor& l);

/// Indices of the k largest entries of row i of a kernel, excluding i itself.
/// Equal values resolve in favour of the lower index.
std::vector<std::size_t> knn_of(const Tensor& kernel, std::size_t i, std::size_t k);

/// Neighbor-restricted CKA on inner-product kernels. Pair (i, j) contributes
/// when i != j, i is among the k nearest neighbors of j under B, and j is
/// among the k nearest neighbors of i under A.
double cknna(const Tensor& features_a, const Tensor& features_b, std::size_t k = 10);

struct RgbImage {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> pixels;  // rows × cols × 3
};

struct PcaResult {
  Tensor projected;                // [N, 3] scores on the top three components
  std::vector<double> eigenvalues;  // top three covariance eigenvalues, descending
  Tensor components;               // [3, D] unit loadings, largest-|.| entry positive
  RgbImage image;
};

/// Projects mean-centered features on their top three principal axes and
/// min-max scales each channel to 0..255. Rejects features of rank < 3.
PcaResult pca_rgb(const Tensor& features, std::size_t rows, std::size_t cols);

/// Maps a matrix with values in [lo, hi] to an 8-bit grey image.
std::vector<std::uint8_t> to_grey(const Tensor& m, double lo, double hi);

void write_ppm(const std::filesystem::path& path, const RgbImage& image);
void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               const std::vector<std::uint8_t>& grey);

}  // namespace laver
