#include "laver/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <Eigen/Core>

#include "laver/rng.hpp"

namespace laver {
namespace {

std::size_t product(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

ConstMap view(const Tensor& t) {
  return ConstMap(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}
MutMap view(Tensor& t) {
  return MutMap(t.data(), static_cast<Eigen::Index>(t.dim(0)), static_cast<Eigen::Index>(t.dim(1)));
}

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw std::invalid_argument(std::string(what) + ": expected a 2-D tensor, got " +
                                shape_string(t.shape()));
  }
}

// Eight independent partial sums let the compiler vectorize the reduction
// without reassociation flags.
inline float dot(const float* a, const float* b, std::size_t n) noexcept {
  float acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  }
  float tail = 0.0f;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, float fill)
    : shape_(std::move(shape)), data_(product(shape_), fill) {
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape_) + " needs " +
                                std::to_string(product(shape_)) + " values, got " +
                                std::to_string(data_.size()));
  }
  cols_ = shape_.empty() ? 1 : shape_.back();
}

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<float>> rows) {
  const std::size_t n_rows = rows.size();
  const std::size_t n_cols = n_rows == 0 ? 0 : rows.begin()->size();
  std::vector<float> data;
  data.reserve(n_rows * n_cols);
  for (const auto& r : rows) {
    if (r.size() != n_cols) throw std::invalid_argument("Tensor::from_rows: ragged rows");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor({n_rows, n_cols}, std::move(data));
}

Tensor Tensor::identity(std::size_t n) {
  Tensor t({n, n});
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) throw std::out_of_range("Tensor::dim: axis out of range");
  return shape_[axis];
}

std::size_t Tensor::rows() const { return cols_ == 0 ? 0 : data_.size() / cols_; }
std::size_t Tensor::cols() const { return cols_; }

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(float v) noexcept { std::fill(data_.begin(), data_.end(), v); }

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

std::string shape_string(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw std::invalid_argument("matmul: inner dimensions differ (" + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()) + ")");
  }
  Tensor c({m, n});
  if (m && n && k) view(c).noalias() = view(a) * view(b);
  return c;
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_nt");
  require_2d(b, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw std::invalid_argument("matmul_nt: inner dimensions differ (" + shape_string(a.shape()) +
                                " x " + shape_string(b.shape()) + "^T)");
  }
  Tensor c({m, n});
  if (m && n && k) view(c).noalias() = view(a) * view(b).transpose();
  return c;
}

Tensor matmul_tn(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul_tn");
  Tensor c({a.dim(1), b.rank() == 2 ? b.dim(1) : 0});
  matmul_tn_accumulate(a, b, c);
  return c;
}

void matmul_tn_accumulate(const Tensor& a, const Tensor& b, Tensor& c) {
  require_2d(a, "matmul_tn");
  require_2d(b, "matmul_tn");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != m || c.rows() != k || c.cols() != n) {
    throw std::invalid_argument("matmul_tn: shapes " + shape_string(a.shape()) + "^T x " +
                                shape_string(b.shape()) + " -> " + shape_string(c.shape()));
  }
  if (m && n && k) view(c).noalias() += view(a).transpose() * view(b);
}

Tensor transpose(const Tensor& a) {
  require_2d(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor t({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t(j, i) = a(i, j);
  return t;
}

void add_row_bias(Tensor& x, const Tensor& bias) {
  if (bias.size() != x.cols()) {
    throw std::invalid_argument("add_row_bias: bias length " + std::to_string(bias.size()) +
                                " vs " + std::to_string(x.cols()) + " columns");
  }
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    float* xr = x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) xr[j] += bias[j];
  }
}

void accumulate_column_sums(const Tensor& x, Tensor& out) {
  if (out.size() != x.cols()) throw std::invalid_argument("accumulate_column_sums: width mismatch");
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const float* xr = x.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) out[j] += xr[j];
  }
}

void add_inplace(Tensor& dst, const Tensor& src) { axpy_inplace(dst, 1.0f, src); }

void axpy_inplace(Tensor& dst, float alpha, const Tensor& src) {
  if (dst.size() != src.size()) {
    throw std::invalid_argument("axpy: size mismatch " + shape_string(dst.shape()) + " vs " +
                                shape_string(src.shape()));
  }
  float* d = dst.data();
  const float* s = src.data();
  for (std::size_t i = 0; i < dst.size(); ++i) d[i] += alpha * s[i];
}

Tensor softmax(const Tensor& x, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("softmax: temperature must be positive");
  Tensor out(x.shape());
  const std::size_t n = x.cols();
  if (n == 0) return out;
  std::vector<double> buf(n);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      buf[j] = std::exp((static_cast<double>(in[j]) - mx) / temperature);
      sum += buf[j];
    }
    auto o = out.row(r);
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(buf[j] / sum);
  }
  return out;
}

std::vector<double> log_softmax_row(std::span<const float> x, double temperature) {
  if (!(temperature > 0.0)) throw std::invalid_argument("log_softmax: temperature must be positive");
  std::vector<double> out(x.size());
  if (x.empty()) return out;
  double mx = -std::numeric_limits<double>::infinity();
  for (float v : x) mx = std::max(mx, static_cast<double>(v) / temperature);
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    out[j] = static_cast<double>(x[j]) / temperature - mx;
    sum += std::exp(out[j]);
  }
  const double lse = std::log(sum);
  for (auto& v : out) v -= lse;
  return out;
}

Tensor l2_normalize(const Tensor& x) {
  Tensor out(x.shape());
  const std::size_t n = x.cols();
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double ss = 0.0;
    for (float v : in) ss += static_cast<double>(v) * v;
    const double norm = std::sqrt(ss);
    if (!(norm > kNormalizeEps)) {
      throw std::invalid_argument("l2_normalize: row " + std::to_string(r) +
                                  " has near-zero norm");
    }
    auto o = out.row(r);
    for (std::size_t j = 0; j < n; ++j) o[j] = static_cast<float>(in[j] / norm);
  }
  return out;
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  LayerNormStats stats;
  return layernorm(x, gain, bias, stats);
}

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormStats& stats) {
  const std::size_t n = x.cols();
  if (gain.size() != n || bias.size() != n) {
    throw std::invalid_argument("layernorm: gain/bias length must equal row width " +
                                std::to_string(n));
  }
  Tensor out(x.shape());
  stats.normalized = Tensor(x.shape());
  stats.inv_std.assign(x.rows(), 0.0f);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto in = x.row(r);
    double mean = 0.0;
    for (float v : in) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + kLayerNormEps);
    stats.inv_std[r] = static_cast<float>(inv_std);
    auto xh = stats.normalized.row(r);
    auto o = out.row(r);
    for (std::size_t j = 0; j < n; ++j) {
      xh[j] = static_cast<float>((in[j] - mean) * inv_std);
      o[j] = xh[j] * gain[j] + bias[j];
    }
  }
  return out;
}

Tensor layernorm_backward(const Tensor& dy, const Tensor& gain, const LayerNormStats& stats,
                          Tensor& dgain, Tensor& dbias) {
  const std::size_t n = dy.cols();
  Tensor dx(dy.shape());
  std::vector<float> dxh(n);
  for (std::size_t r = 0; r < dy.rows(); ++r) {
    auto g = dy.row(r);
    auto xh = stats.normalized.row(r);
    double mean_dxh = 0.0, mean_dxh_xh = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      dgain[j] += g[j] * xh[j];
      dbias[j] += g[j];
      dxh[j] = g[j] * gain[j];
      mean_dxh += dxh[j];
      mean_dxh_xh += static_cast<double>(dxh[j]) * xh[j];
    }
    mean_dxh /= static_cast<double>(n);
    mean_dxh_xh /= static_cast<double>(n);
    auto o = dx.row(r);
    const double inv_std = stats.inv_std[r];
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = static_cast<float>(inv_std * (dxh[j] - mean_dxh - xh[j] * mean_dxh_xh));
    }
  }
  return dx;
}

Tensor gelu(const Tensor& x) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = x[i];
    out[i] = 0.5f * v * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2)));
  }
  return out;
}

Tensor gelu_backward(const Tensor& dy, const Tensor& x) {
  Tensor dx(x.shape());
  constexpr float inv_sqrt_2pi = 0.3989422804014327f;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float v = x[i];
    const float cdf = 0.5f * (1.0f + std::erf(v * static_cast<float>(M_SQRT1_2)));
    const float pdf = inv_sqrt_2pi * std::exp(-0.5f * v * v);
    dx[i] = dy[i] * (cdf + v * pdf);
  }
  return dx;
}

Tensor sample_gaussian(Rng& rng, std::vector<std::size_t> shape, double stddev) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = static_cast<float>(rng.normal() * stddev);
  return t;
}

}  // namespace laver
