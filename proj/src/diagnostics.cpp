#include "laver/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace laver {
namespace {

using MatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

MatrixXd to_eigen(const Tensor& t) {
  MatrixXd m(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) m.data()[i] = t[i];
  return m;
}

void require_square_kernel(const Tensor& k, const char* what) {
  if (k.rank() != 2 || k.rows() != k.cols()) {
    throw std::invalid_argument(std::string(what) + ": kernel must be square, got " +
                                shape_string(k.shape()));
  }
  if (k.rows() < 2) throw std::invalid_argument(std::string(what) + ": need N >= 2");
  for (std::size_t i = 0; i < k.rows(); ++i) {
    for (std::size_t j = i + 1; j < k.cols(); ++j) {
      if (k(i, j) != k(j, i)) {
        throw std::invalid_argument(std::string(what) + ": kernel is not symmetric at (" +
                                    std::to_string(i) + ", " + std::to_string(j) + ")");
      }
    }
  }
}

// Row-mean centred copy of a kernel.
MatrixXd centre_rows(const MatrixXd& k) {
  MatrixXd c = k;
  for (Eigen::Index i = 0; i < c.rows(); ++i) c.row(i).array() -= c.row(i).mean();
  return c;
}

// Σ_ij mask(i,j) · a_ij · b_ij / (N−1)²; an empty mask means every pair.
double masked_product(const MatrixXd& a, const MatrixXd& b, const std::vector<std::uint8_t>* mask) {
  const auto n = a.rows();
  double s = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (mask && !(*mask)[static_cast<std::size_t>(i * n + j)]) continue;
      s += a(i, j) * b(i, j);
    }
  }
  const double m = static_cast<double>(n - 1);
  return s / (m * m);
}

// member[i*n + j] == 1 when j is among the k nearest neighbors of i.
std::vector<std::uint8_t> knn_membership(const MatrixXd& kernel, std::size_t k) {
  const auto n = static_cast<std::size_t>(kernel.rows());
  std::vector<std::uint8_t> member(n * n, 0);
  std::vector<std::size_t> order;
  for (std::size_t i = 0; i < n; ++i) {
    order.clear();
    for (std::size_t j = 0; j < n; ++j) {
      if (j != i) order.push_back(j);
    }
    const auto row = kernel.row(static_cast<Eigen::Index>(i));
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                      [&](std::size_t a, std::size_t b) {
                        const double va = row(static_cast<Eigen::Index>(a));
                        const double vb = row(static_cast<Eigen::Index>(b));
                        return va > vb || (va == vb && a < b);
                      });
    for (std::size_t m = 0; m < k; ++m) member[i * n + order[m]] = 1;
  }
  return member;
}

}  // namespace

double mean_pairwise_cosine(const Tensor& features) {
  if (features.rank() != 2 || features.rows() < 2) {
    throw std::invalid_argument("mean_pairwise_cosine: need at least 2 feature rows");
  }
  const std::size_t n = features.rows(), d = features.cols();
  std::vector<double> sum(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    auto r = features.row(i);
    double ss = 0.0;
    for (float v : r) ss += static_cast<double>(v) * v;
    const double norm = std::sqrt(ss);
    if (!(norm > kNormalizeEps)) {
      throw std::invalid_argument("mean_pairwise_cosine: row " + std::to_string(i) + " is zero");
    }
    for (std::size_t j = 0; j < d; ++j) sum[j] += r[j] / norm;
  }
  // Σ_{i<j} u_i·u_j = (‖Σ u_i‖² − N) / 2
  double s2 = 0.0;
  for (double v : sum) s2 += v * v;
  const double pairs = 0.5 * static_cast<double>(n) * static_cast<double>(n - 1);
  return std::clamp(0.5 * (s2 - static_cast<double>(n)) / pairs, -1.0, 1.0);
}

std::vector<double> homogenization_profile(const ForwardTrace& trace,
                                           std::span<const std::size_t> vision_positions) {
  if (trace.hidden.empty()) throw std::invalid_argument("homogenization_profile: trace has no hidden states");
  std::vector<double> out;
  out.reserve(trace.hidden.size());
  for (const auto& h : trace.hidden) {
    for (auto p : vision_positions) {
      if (p >= h.rows()) throw std::invalid_argument("homogenization_profile: position out of range");
    }
    out.push_back(mean_pairwise_cosine(gather_rows(h, vision_positions)));
  }
  return out;
}

std::vector<double> attention_allocation(const ForwardTrace& trace,
                                         std::span<const std::size_t> vision_positions,
                                         std::span<const std::size_t> query_positions) {
  if (query_positions.empty()) throw std::invalid_argument("attention_allocation: empty query set");
  if (trace.attention.empty()) throw std::invalid_argument("attention_allocation: trace has no attention maps");
  std::vector<double> out;
  out.reserve(trace.attention.size());
  for (const auto& a : trace.attention) {
    const std::size_t heads = a.dim(0), t = a.dim(1);
    for (auto p : vision_positions) {
      if (p >= t) throw std::invalid_argument("attention_allocation: vision position out of range");
    }
    double total = 0.0;
    for (std::size_t h = 0; h < heads; ++h) {
      for (auto q : query_positions) {
        if (q >= t) throw std::invalid_argument("attention_allocation: query position out of range");
        const float* row = a.data() + (h * t + q) * t;
        double mass = 0.0;
        for (auto j : vision_positions) mass += row[j];
        total += mass;
      }
    }
    out.push_back(total / static_cast<double>(heads * query_positions.size()));
  }
  return out;
}

Tensor linear_kernel(const Tensor& features) {
  if (features.rank() != 2) throw std::invalid_argument("linear_kernel: expected [N, D]");
  const MatrixXd x = to_eigen(features);
  const MatrixXd k = x * x.transpose();
  Tensor out({features.rows(), features.rows()});
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(k.data()[i]);
  return out;
}

double hsic(const Tensor& k, const Tensor& l) {
  require_square_kernel(k, "hsic");
  require_square_kernel(l, "hsic");
  if (k.rows() != l.rows()) throw std::invalid_argument("hsic: kernels cover different sample counts");
  return masked_product(centre_rows(to_eigen(k)), centre_rows(to_eigen(l)), nullptr);
}

double cka(const Tensor& k, const Tensor& l) {
  const double kl = hsic(k, l);
  const double kk = hsic(k, k);
  const double ll = hsic(l, l);
  if (!(kk > 0.0)) throw std::invalid_argument("cka: first kernel has zero centered variance");
  if (!(ll > 0.0)) throw std::invalid_argument("cka: second kernel has zero centered variance");
  return kl / std::sqrt(kk * ll);
}

std::vector<std::size_t> knn_of(const Tensor& kernel, std::size_t i, std::size_t k) {
  if (kernel.rank() != 2 || kernel.rows() != kernel.cols()) {
    throw std::invalid_argument("knn_of: kernel must be square");
  }
  const std::size_t n = kernel.rows();
  if (i >= n) throw std::invalid_argument("knn_of: index out of range");
  if (k < 1 || k > n - 1) throw std::invalid_argument("knn_of: k must lie in 1..N-1");
  const auto member = knn_membership(to_eigen(kernel), k);
  std::vector<std::size_t> out;
  for (std::size_t j = 0; j < n; ++j) {
    if (member[i * n + j]) out.push_back(j);
  }
  return out;
}

double cknna(const Tensor& features_a, const Tensor& features_b, std::size_t k) {
  if (features_a.rank() != 2 || features_b.rank() != 2 || features_a.rows() != features_b.rows()) {
    throw std::invalid_argument("cknna: feature sets must be [N, Da] and [N, Db] with equal N");
  }
  const std::size_t n = features_a.rows();
  if (n < 2 || k < 1 || k > n - 1) {
    throw std::invalid_argument("cknna: k = " + std::to_string(k) + " outside 1.." +
                                std::to_string(n < 1 ? 0 : n - 1));
  }
  const MatrixXd xa = to_eigen(features_a), xb = to_eigen(features_b);
  const MatrixXd ka = xa * xa.transpose();
  const MatrixXd kb = xb * xb.transpose();
  const auto in_a = knn_membership(ka, k);
  const auto in_b = knn_membership(kb, k);

  std::vector<std::uint8_t> ab(n * n), aa(n * n), bb(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const std::size_t ij = i * n + j, ji = j * n + i;
      const bool off = i != j;
      ab[ij] = off && in_b[ji] && in_a[ij];
      aa[ij] = off && in_a[ji] && in_a[ij];
      bb[ij] = off && in_b[ji] && in_b[ij];
    }
  }
  const MatrixXd ca = centre_rows(ka), cb = centre_rows(kb);
  const double hab = masked_product(ca, cb, &ab);
  const double haa = masked_product(ca, ca, &aa);
  const double hbb = masked_product(cb, cb, &bb);
  if (!(haa > 0.0) || !(hbb > 0.0)) {
    throw std::invalid_argument("cknna: neighbor-restricted kernel has zero centered variance");
  }
  return hab / std::sqrt(haa * hbb);
}

PcaResult pca_rgb(const Tensor& features, std::size_t rows, std::size_t cols) {
  if (features.rank() != 2) throw std::invalid_argument("pca_rgb: expected [N, D]");
  const std::size_t n = features.rows(), d = features.cols();
  if (n != rows * cols) {
    throw std::invalid_argument("pca_rgb: " + std::to_string(n) + " features do not fill a " +
                                std::to_string(rows) + "x" + std::to_string(cols) + " grid");
  }
  if (d < 3) throw std::invalid_argument("pca_rgb: need at least 3 feature dimensions");
  if (n < 2) throw std::invalid_argument("pca_rgb: need at least 2 features");

  MatrixXd x = to_eigen(features);
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const MatrixXd cov = (x.transpose() * x) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw std::runtime_error("pca_rgb: eigendecomposition failed");
  const Eigen::VectorXd& values = solver.eigenvalues();  // ascending
  const double top = std::max(values(values.size() - 1), 0.0);
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (values(i) > 1e-9 * top && values(i) > 1e-300) ++rank;
  }
  if (rank < 3) {
    throw std::invalid_argument("pca_rgb: feature rank " + std::to_string(rank) +
                                " is below the 3 components needed");
  }

  PcaResult out;
  out.projected = Tensor({n, 3});
  out.components = Tensor({3, d});
  out.image = RgbImage{rows, cols, std::vector<std::uint8_t>(n * 3)};
  for (std::size_t c = 0; c < 3; ++c) {
    const Eigen::Index idx = values.size() - 1 - static_cast<Eigen::Index>(c);
    Eigen::VectorXd v = solver.eigenvectors().col(idx);
    Eigen::Index arg = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
      if (std::abs(v(i)) > std::abs(v(arg))) arg = i;
    }
    if (v(arg) < 0.0) v = -v;
    out.eigenvalues.push_back(values(idx));
    for (std::size_t j = 0; j < d; ++j) out.components(c, j) = static_cast<float>(v(static_cast<Eigen::Index>(j)));

    const Eigen::VectorXd score = x * v;
    const double lo = score.minCoeff(), hi = score.maxCoeff();
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double s = score(static_cast<Eigen::Index>(i));
      out.projected(i, c) = static_cast<float>(s);
      const double scaled = span > 0.0 ? 255.0 * (s - lo) / span : 0.0;
      out.image.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(std::clamp(scaled, 0.0, 255.0)));
    }
  }
  return out;
}

std::vector<std::uint8_t> to_grey(const Tensor& m, double lo, double hi) {
  if (!(hi > lo)) throw std::invalid_argument("to_grey: empty value range");
  std::vector<std::uint8_t> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) {
    const double s = 255.0 * (static_cast<double>(m[i]) - lo) / (hi - lo);
    out[i] = static_cast<std::uint8_t>(std::lround(std::clamp(s, 0.0, 255.0)));
  }
  return out;
}

void write_ppm(const std::filesystem::path& path, const RgbImage& image) {
  if (image.pixels.size() != image.rows * image.cols * 3) {
    throw std::invalid_argument("write_ppm: pixel buffer does not match the image extents");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P6\n" << image.cols << ' ' << image.rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(image.pixels.data()),
           static_cast<std::streamsize>(image.pixels.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

void write_pgm(const std::filesystem::path& path, std::size_t rows, std::size_t cols,
               const std::vector<std::uint8_t>& grey) {
  if (grey.size() != rows * cols) throw std::invalid_argument("write_pgm: buffer size mismatch");
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << "P5\n" << cols << ' ' << rows << "\n255\n";
  os.write(reinterpret_cast<const char*>(grey.data()), static_cast<std::streamsize>(grey.size()));
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace laver
