#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "laver/masking.hpp"
#include "laver/model.hpp"
#include "laver/tensor.hpp"

namespace laver {

struct LossWeights {
  double mim = 1.0;
  double cga = 1.0;  // also weights plain Gram-Anchoring when that variant is active
};

struct Temperatures {
  double teacher = 0.04;
  double student = 0.1;
};

/// A scalar loss and its gradient with respect to the student-side input.
/// Teacher-side arguments are taken by const reference and never receive a gradient.
struct LossValue {
  double value = 0.0;
  Tensor grad;
};

/// Mean next-token cross-entropy. Row r of `logits` scores `targets[r]`; rows
/// before `prompt_len` are context only, so the mean runs over the remaining
/// rows.size() − prompt_len rows.
LossValue lm_loss(const Tensor& logits, std::span<const int> targets, std::size_t prompt_len);

/// Cross-entropy between the sharpened teacher distribution softmax(ẑ/τ_t)
/// and the student log-distribution log softmax(z̃/τ_s), summed over masked
/// rows and divided by their count. Zero when nothing is masked.
LossValue mim_loss(const Tensor& student, const Tensor& teacher, const MaskPlan& mask,
                   const Temperatures& temps);

/// Cosine-similarity Gram matrix Norm(z) · Norm(z)ᵀ, computed in 64 bits.
Tensor gram(const Tensor& z);

/// ‖G(z̃) − G(ẑ)‖²_F.
LossValue ga_loss(const Tensor& student, const Tensor& teacher);
/// ‖max(0, G(z̃) − G(ẑ))‖²_F: only entries where the student is more
/// self-similar than the teacher are penalized.
LossValue cga_loss(const Tensor& student, const Tensor& teacher);

struct LossComponent {
  double value = 0.0;
  const ModelParams* grads = nullptr;  // null when the term is inactive
};

struct LossReport {
  double lm = 0.0;
  double mim = 0.0;
  double ga = 0.0;
  double cga = 0.0;
  double total = 0.0;
  ModelParams grads;
};

/// total = lm + ω_MIM·mim + ω_CGA·(ga + cga), gradients summed with the same weights.
LossReport total_loss(const ModelConfig& config, const LossComponent& lm, const LossComponent& mim,
                      const LossComponent& ga, const LossComponent& cga, const LossWeights& weights);

}  // namespace laver
