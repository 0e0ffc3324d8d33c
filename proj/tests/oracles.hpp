#pragma once

// Straight-line reference implementations shared by the unit tests and the
// acceptance binary. Deliberately slow and independent of src/.

#include <cmath>
#include <cstddef>
#include <vector>

#include "laver/tensor.hpp"

namespace oracle {

using Mat = std::vector<std::vector<double>>;

// Textbook 1-D rotary transform of one vector: adjacent pairs, frequency base^(-2i/n).
inline std::vector<double> rotary_1d(const std::vector<double>& x, double pos, double base) {
  std::vector<double> out(x.size());
  const std::size_t n = x.size();
  for (std::size_t i = 0; i < n / 2; ++i) {
    const double a = pos * std::pow(base, -2.0 * double(i) / double(n));
    out[2 * i] = x[2 * i] * std::cos(a) - x[2 * i + 1] * std::sin(a);
    out[2 * i + 1] = x[2 * i] * std::sin(a) + x[2 * i + 1] * std::cos(a);
  }
  return out;
}

inline Mat inner(const laver::Tensor& x) {
  const std::size_t n = x.rows();
  Mat k(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t d = 0; d < x.cols(); ++d) k[i][j] += double(x(i, d)) * x(j, d);
  return k;
}

// j is a neighbor of i: fewer than k other candidates beat it (ties to the lower index).
inline bool neighbor(const Mat& k, std::size_t i, std::size_t j, std::size_t kk) {
  if (i == j) return false;
  std::size_t better = 0;
  for (std::size_t m = 0; m < k.size(); ++m) {
    if (m == i || m == j) continue;
    if (k[i][m] > k[i][j] || (k[i][m] == k[i][j] && m < j)) ++better;
  }
  return better < kk;
}

// Pair (i, j) counts when j is near i under `near_a` and i is near j under `near_b`.
inline double restricted_hsic(const Mat& a, const Mat& b, const Mat& near_a, const Mat& near_b, std::size_t kk) {
  const std::size_t n = a.size();
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (!(neighbor(near_a, i, j, kk) && neighbor(near_b, j, i, kk))) continue;
      double ma = 0.0, mb = 0.0;
      for (std::size_t m = 0; m < n; ++m) {
        ma += a[i][m];
        mb += b[i][m];
      }
      s += (a[i][j] - ma / n) * (b[i][j] - mb / n);
    }
  return s / double((n - 1) * (n - 1));
}

inline double cknna(const laver::Tensor& xa, const laver::Tensor& xb, std::size_t kk) {
  const Mat a = inner(xa), b = inner(xb);
  const double ab = restricted_hsic(a, b, a, b, kk);
  const double aa = restricted_hsic(a, a, a, a, kk);
  const double bb = restricted_hsic(b, b, b, b, kk);
  return ab / std::sqrt(aa * bb);
}

}  // namespace oracle
