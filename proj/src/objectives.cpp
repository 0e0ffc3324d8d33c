#include "laver/objectives.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace laver {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.rank() != 2 || a.shape() != b.shape()) {
    throw std::invalid_argument(std::string(what) + ": student " + shape_string(a.shape()) +
                                " and teacher " + shape_string(b.shape()) + " must match");
  }
}

void require_temps(const Temperatures& t) {
  if (!(t.teacher > 0.0) || !(t.student > 0.0)) {
    throw std::invalid_argument("temperatures must be positive");
  }
}

// Row-normalized copy in 64 bits plus the original row norms.
struct Normalized {
  std::size_t n = 0, d = 0;
  std::vector<double> u;
  std::vector<double> norm;
};

Normalized normalize_rows(const Tensor& z) {
  Normalized out{z.rows(), z.cols(), std::vector<double>(z.size()), std::vector<double>(z.rows())};
  for (std::size_t i = 0; i < out.n; ++i) {
    auto r = z.row(i);
    double ss = 0.0;
    for (float v : r) ss += static_cast<double>(v) * v;
    const double norm = std::sqrt(ss);
    if (!(norm > kNormalizeEps)) {
      throw std::invalid_argument("gram: row " + std::to_string(i) + " has near-zero norm");
    }
    out.norm[i] = norm;
    for (std::size_t j = 0; j < out.d; ++j) out.u[i * out.d + j] = r[j] / norm;
  }
  return out;
}

std::vector<double> gram64(const Normalized& nz) {
  std::vector<double> g(nz.n * nz.n);
  for (std::size_t i = 0; i < nz.n; ++i) {
    for (std::size_t j = i; j < nz.n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < nz.d; ++k) s += nz.u[i * nz.d + k] * nz.u[j * nz.d + k];
      g[i * nz.n + j] = s;
      g[j * nz.n + i] = s;
    }
  }
  return g;
}

// Shared body of GA and CGA. `residual` holds G(z̃) − G(ẑ), possibly clipped;
// the loss is Σ residual² and dL/dG = 2·residual.
LossValue gram_anchor(const Tensor& student, const Tensor& teacher, bool clipped) {
  const Normalized s = normalize_rows(student);
  const Normalized t = normalize_rows(teacher);
  const std::vector<double> gs = gram64(s);
  const std::vector<double> gt = gram64(t);
  const std::size_t n = s.n, d = s.d;

  std::vector<double> residual(n * n);
  double loss = 0.0;
  for (std::size_t k = 0; k < n * n; ++k) {
    double e = gs[k] - gt[k];
    if (clipped && e < 0.0) e = 0.0;
    residual[k] = e;
    loss += e * e;
  }

  // G = U Uᵀ with symmetric residual R: dL/dU = 2 (R + Rᵀ) U = 4 R U.
  LossValue out{loss, Tensor(student.shape())};
  std::vector<double> du(d);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(du.begin(), du.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      const double r = residual[i * n + j];
      if (r == 0.0) continue;
      for (std::size_t k = 0; k < d; ++k) du[k] += 4.0 * r * s.u[j * d + k];
    }
    // Through u = z / ‖z‖: dz = (du − u (u·du)) / ‖z‖.
    double proj = 0.0;
    for (std::size_t k = 0; k < d; ++k) proj += s.u[i * d + k] * du[k];
    auto g = out.grad.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      g[k] = static_cast<float>((du[k] - s.u[i * d + k] * proj) / s.norm[i]);
    }
  }
  return out;
}

}  // namespace

LossValue lm_loss(const Tensor& logits, std::span<const int> targets, std::size_t prompt_len) {
  if (logits.rank() != 2) throw std::invalid_argument("lm_loss: logits must be [T, vocab]");
  const std::size_t t = logits.rows(), vocab = logits.cols();
  if (targets.size() != t) {
    throw std::invalid_argument("lm_loss: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(t) + " logit rows");
  }
  if (prompt_len >= t) {
    throw std::invalid_argument("lm_loss: prompt length " + std::to_string(prompt_len) +
                                " leaves no supervised rows out of " + std::to_string(t));
  }
  const double count = static_cast<double>(t - prompt_len);
  LossValue out{0.0, Tensor(logits.shape())};
  for (std::size_t r = prompt_len; r < t; ++r) {
    const int target = targets[r];
    if (target < 0 || static_cast<std::size_t>(target) >= vocab) {
      throw std::invalid_argument("lm_loss: target id " + std::to_string(target) + " out of range");
    }
    const auto logp = log_softmax_row(logits.row(r), 1.0);
    out.value -= logp[static_cast<std::size_t>(target)];
    auto g = out.grad.row(r);
    for (std::size_t c = 0; c < vocab; ++c) {
      const double p = std::exp(logp[c]);
      g[c] = static_cast<float>((p - (static_cast<int>(c) == target ? 1.0 : 0.0)) / count);
    }
  }
  out.value /= count;
  return out;
}

LossValue mim_loss(const Tensor& student, const Tensor& teacher, const MaskPlan& mask,
                   const Temperatures& temps) {
  require_same_shape(student, teacher, "mim_loss");
  require_temps(temps);
  if (mask.mask.size() != student.rows()) {
    throw std::invalid_argument("mim_loss: mask covers " + std::to_string(mask.mask.size()) +
                                " rows, logits have " + std::to_string(student.rows()));
  }
  LossValue out{0.0, Tensor(student.shape())};
  const std::size_t masked = mask.masked_count();
  if (masked == 0) return out;
  const double inv_count = 1.0 / static_cast<double>(masked);
  const std::size_t dv = student.cols();
  for (std::size_t i = 0; i < student.rows(); ++i) {
    if (!mask.mask[i]) continue;
    const auto log_tea = log_softmax_row(teacher.row(i), temps.teacher);
    const auto log_stu = log_softmax_row(student.row(i), temps.student);
    auto g = out.grad.row(i);
    for (std::size_t c = 0; c < dv; ++c) {
      const double p_tea = std::exp(log_tea[c]);
      out.value -= p_tea * log_stu[c];
      g[c] = static_cast<float>((std::exp(log_stu[c]) - p_tea) / temps.student * inv_count);
    }
  }
  out.value *= inv_count;
  return out;
}

Tensor gram(const Tensor& z) {
  if (z.rank() != 2) throw std::invalid_argument("gram: expected [N, D]");
  const Normalized nz = normalize_rows(z);
  const std::vector<double> g = gram64(nz);
  Tensor out({nz.n, nz.n});
  for (std::size_t k = 0; k < g.size(); ++k) out[k] = static_cast<float>(g[k]);
  return out;
}

LossValue ga_loss(const Tensor& student, const Tensor& teacher) {
  require_same_shape(student, teacher, "ga_loss");
  return gram_anchor(student, teacher, /*clipped=*/false);
}

LossValue cga_loss(const Tensor& student, const Tensor& teacher) {
  require_same_shape(student, teacher, "cga_loss");
  return gram_anchor(student, teacher, /*clipped=*/true);
}

LossReport total_loss(const ModelConfig& config, const LossComponent& lm, const LossComponent& mim,
                      const LossComponent& ga, const LossComponent& cga, const LossWeights& weights) {
  if (weights.mim < 0.0 || weights.cga < 0.0) {
    throw std::invalid_argument("loss weights must be nonnegative");
  }
  LossReport report;
  report.lm = lm.value;
  report.mim = mim.value;
  report.ga = ga.value;
  report.cga = cga.value;
  report.total = lm.value + weights.mim * mim.value + weights.cga * (ga.value + cga.value);
  report.grads = ModelParams::zeros(config);

  const auto accumulate = [&](const LossComponent& c, double w) {
    if (c.grads == nullptr || w == 0.0) return;
    std::vector<Tensor*> dst;
    report.grads.visit([&](const std::string&, ParamGroup, Tensor& t) { dst.push_back(&t); });
    std::size_t k = 0;
    c.grads->visit([&](const std::string&, ParamGroup, const Tensor& t) {
      axpy_inplace(*dst[k++], static_cast<float>(w), t);
    });
  };
  accumulate(lm, 1.0);
  accumulate(mim, weights.mim);
  accumulate(ga, weights.cga);
  accumulate(cga, weights.cga);
  return report;
}

}  // namespace laver
