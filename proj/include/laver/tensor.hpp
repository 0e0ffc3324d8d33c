#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace laver {

class Rng;

/// Dense row-major float32 tensor. Extents are fixed at construction;
/// the buffer always holds product(shape) values.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, float fill = 0.0f);
  Tensor(std::vector<std::size_t> shape, std::vector<float> data);

  /// Builds a 2-D tensor from nested rows; all rows must have equal length.
  static Tensor from_rows(std::initializer_list<std::initializer_list<float>> rows);
  static Tensor identity(std::size_t n);

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return data_.empty(); }

  // 2-D views. rows() is the product of all leading axes, cols() the last.
  std::size_t rows() const;
  std::size_t cols() const;

  float* data() noexcept { return data_.data(); }
  const float* data() const noexcept { return data_.data(); }
  std::span<float> values() noexcept { return data_; }
  std::span<const float> values() const noexcept { return data_; }
  std::vector<float>& storage() noexcept { return data_; }

  float& operator[](std::size_t i) noexcept { return data_[i]; }
  float operator[](std::size_t i) const noexcept { return data_[i]; }
  float& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  float operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<float> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const float> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  Tensor reshaped(std::vector<std::size_t> shape) const;
  void fill(float v) noexcept;
  bool all_finite() const noexcept;

  friend bool operator==(const Tensor& a, const Tensor& b) noexcept {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  std::vector<std::size_t> shape_;
  std::vector<float> data_;
  std::size_t cols_ = 0;
};

std::string shape_string(const std::vector<std::size_t>& shape);

/// c = a · b for a[m,k], b[k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// c = a · bᵀ for a[m,k], b[n,k].
Tensor matmul_nt(const Tensor& a, const Tensor& b);
/// c = aᵀ · b for a[m,k], b[m,n].
Tensor matmul_tn(const Tensor& a, const Tensor& b);
/// c += aᵀ · b, the weight-gradient form.
void matmul_tn_accumulate(const Tensor& a, const Tensor& b, Tensor& c);
Tensor transpose(const Tensor& a);

/// Adds `bias` to every row of x in place.
void add_row_bias(Tensor& x, const Tensor& bias);
/// Column sums of x accumulated into out.
void accumulate_column_sums(const Tensor& x, Tensor& out);
void add_inplace(Tensor& dst, const Tensor& src);
void axpy_inplace(Tensor& dst, float alpha, const Tensor& src);

/// Softmax over the last axis of x / temperature, max-subtracted, 64-bit sums.
Tensor softmax(const Tensor& x, double temperature = 1.0);
/// Row-wise log-softmax of x / temperature, computed in 64 bits.
std::vector<double> log_softmax_row(std::span<const float> x, double temperature);

inline constexpr double kNormalizeEps = 1e-12;
inline constexpr double kLayerNormEps = 1e-5;

/// Scales each row to unit L2 norm. A row with norm <= 1e-12 is rejected.
Tensor l2_normalize(const Tensor& x);

struct LayerNormStats {
  Tensor normalized;           // x̂ before the affine map
  std::vector<float> inv_std;  // one per row
};

Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias);
Tensor layernorm(const Tensor& x, const Tensor& gain, const Tensor& bias, LayerNormStats& stats);
/// Backward of layernorm. Accumulates dgain/dbias and returns dx.
Tensor layernorm_backward(const Tensor& dy, const Tensor& gain, const LayerNormStats& stats,
                          Tensor& dgain, Tensor& dbias);

/// Exact (erf) GELU.
Tensor gelu(const Tensor& x);
/// dL/dx given upstream dy and the pre-activation x.
Tensor gelu_backward(const Tensor& dy, const Tensor& x);

Tensor sample_gaussian(Rng& rng, std::vector<std::size_t> shape, double stddev);

}  // namespace laver
