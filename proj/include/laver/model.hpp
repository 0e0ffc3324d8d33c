#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "laver/geometry.hpp"
#include "laver/rng.hpp"
#include "laver/tensor.hpp"

namespace laver {

struct ModelConfig {
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t vocab_size = 32;
  std::size_t visual_logit_dim = 128;
  std::size_t vision_head_hidden = 256;
  std::size_t patch_size = 4;
  std::size_t grid_rows = 8;
  std::size_t grid_cols = 8;
  std::size_t channels = 3;
  double rope_base = kRopeBase;
  double init_std = 0.125;  // about 1/sqrt(d_model) at the default width

  std::size_t head_dim() const { return d_model / n_heads; }
  std::size_t mlp_hidden() const { return 4 * d_model; }
  std::size_t patch_features() const { return patch_size * patch_size * channels; }
  std::size_t n_vision_tokens() const { return grid_rows * grid_cols; }
  void validate() const;
};

/// Raised when a forward pass produces a non-finite activation.
class NumericFault : public std::runtime_error {
 public:
  NumericFault(const std::string& what, std::size_t layer)
      : std::runtime_error(what), layer_(layer) {}
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t layer_;
};

enum class ParamGroup { connector, backbone, embedding, lm_head, vision_head };

struct BlockParams {
  Tensor ln1_gain, ln1_bias;
  Tensor w_qkv, b_qkv;  // [D, 3D]: q | k | v column blocks
  Tensor w_out, b_out;
  Tensor ln2_gain, ln2_bias;
  Tensor w_fc, b_fc;    // [D, 4D]
  Tensor w_proj, b_proj;
};

/// Every learnable tensor of the model. Weights are stored [in, out] so a
/// linear layer is x · W + b. The same struct doubles as a gradient buffer.
struct ModelParams {
  ModelConfig config;
  // Encoder-free connector: patch pixels -> Linear -> GELU -> Linear.
  Tensor patch_w1, patch_b1, patch_w2, patch_b2;
  Tensor token_embedding;  // [vocab, D]
  Tensor mask_embedding;   // [D]
  std::vector<BlockParams> blocks;
  Tensor final_ln_gain, final_ln_bias;
  Tensor lm_w, lm_b;
  // Vision head: three linear layers, ReLU after the first two.
  Tensor vh_w1, vh_b1, vh_w2, vh_b2, vh_w3, vh_b3;

  static ModelParams zeros(const ModelConfig& config);

  /// Calls f(name, group, tensor) for every tensor in a fixed order.
  template <typename F>
  void visit(F&& f) {
    visit_impl(*this, f);
  }
  template <typename F>
  void visit(F&& f) const {
    visit_impl(*this, f);
  }

  std::size_t parameter_count() const;
  bool all_finite() const;

 private:
  template <typename Self, typename F>
  static void visit_impl(Self& self, F& f);
};

/// Gaussian(init_std) weights, zero biases, unit LayerNorm gains.
ModelParams init_params(const ModelConfig& config, Rng& rng);

/// True when both parameter sets have identical names and shapes.
bool same_structure(const ModelParams& a, const ModelParams& b);

struct ForwardTrace {
  std::vector<Tensor> hidden;     // L+1 entries [T, D]; [0] is the input, filled when captured
  std::vector<Tensor> attention;  // L entries [heads, T, T], filled when captured
  Tensor final_hidden;            // [T, D] after the final LayerNorm
  Tensor text_logits;             // optional, filled by callers
  Tensor visual_logits;           // optional, filled by callers
};

struct LayerCache {
  LayerNormStats ln1;
  Tensor ln1_out;
  Tensor q, k, v;  // [T, D], q and k already rotated
  Tensor probs;    // [heads, T, T]
  Tensor attn;     // [T, D]
  LayerNormStats ln2;
  Tensor ln2_out;
  Tensor fc_pre;
  Tensor fc_act;
};

/// Activations retained by forward_train for the backward pass.
struct Tape {
  std::vector<LayerCache> layers;
  LayerNormStats final_ln;
  const AttentionLayout* layout = nullptr;
};

ForwardTrace forward(const ModelParams& params, const Tensor& tokens,
                     const AttentionLayout& layout, bool capture);

/// Forward pass that records a tape; returns the post-final-norm hidden states.
Tensor forward_train(const ModelParams& params, const Tensor& tokens,
                     const AttentionLayout& layout, Tape& tape);

/// Backpropagates d(final hidden) through the decoder. Parameter gradients are
/// accumulated into grads; the gradient w.r.t. the input tokens is returned.
Tensor backward(const ModelParams& params, const Tape& tape, const Tensor& d_final,
                ModelParams& grads);

struct PatchCache {
  Tensor patches;  // [N, p*p*ch]
  Tensor pre;      // [N, D] before GELU
  Tensor act;
};

/// Rearranges an image [rows·p, cols·p, ch] into raster-ordered patch rows.
Tensor patchify(const Tensor& pixels, const ModelConfig& config);
Tensor embed_image(const Tensor& pixels, const ModelParams& params);
Tensor embed_image(const Tensor& pixels, const ModelParams& params, PatchCache& cache);
void embed_image_backward(const ModelParams& params, const PatchCache& cache, const Tensor& d_tokens,
                          ModelParams& grads);

Tensor embed_text(std::span<const int> ids, const ModelParams& params);
void embed_text_backward(std::span<const int> ids, const Tensor& d_rows, ModelParams& grads);

struct VisionHeadCache {
  Tensor input, pre1, act1, pre2, act2;
};

Tensor vision_head(const ModelParams& params, const Tensor& hidden);
Tensor vision_head(const ModelParams& params, const Tensor& hidden, VisionHeadCache& cache);
Tensor vision_head_backward(const ModelParams& params, const VisionHeadCache& cache,
                            const Tensor& d_logits, ModelParams& grads);

Tensor lm_logits(const ModelParams& params, const Tensor& hidden);
Tensor lm_logits_backward(const ModelParams& params, const Tensor& hidden, const Tensor& d_logits,
                          ModelParams& grads);

/// Gathers the given rows of x into a new [rows.size(), cols] tensor.
Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows);
/// Adds src row k into dst row rows[k].
void scatter_add_rows(Tensor& dst, std::span<const std::size_t> rows, const Tensor& src);

// ---------------------------------------------------------------------------

template <typename Self, typename F>
void ModelParams::visit_impl(Self& self, F& f) {
  f("patch.w1", ParamGroup::connector, self.patch_w1);
  f("patch.b1", ParamGroup::connector, self.patch_b1);
  f("patch.w2", ParamGroup::connector, self.patch_w2);
  f("patch.b2", ParamGroup::connector, self.patch_b2);
  f("embed.tokens", ParamGroup::embedding, self.token_embedding);
  f("embed.mask", ParamGroup::embedding, self.mask_embedding);
  for (std::size_t l = 0; l < self.blocks.size(); ++l) {
    const std::string p = "blocks." + std::to_string(l) + ".";
    auto& b = self.blocks[l];
    f(p + "ln1.gain", ParamGroup::backbone, b.ln1_gain);
    f(p + "ln1.bias", ParamGroup::backbone, b.ln1_bias);
    f(p + "attn.w_qkv", ParamGroup::backbone, b.w_qkv);
    f(p + "attn.b_qkv", ParamGroup::backbone, b.b_qkv);
    f(p + "attn.w_out", ParamGroup::backbone, b.w_out);
    f(p + "attn.b_out", ParamGroup::backbone, b.b_out);
    f(p + "ln2.gain", ParamGroup::backbone, b.ln2_gain);
    f(p + "ln2.bias", ParamGroup::backbone, b.ln2_bias);
    f(p + "mlp.w_fc", ParamGroup::backbone, b.w_fc);
    f(p + "mlp.b_fc", ParamGroup::backbone, b.b_fc);
    f(p + "mlp.w_proj", ParamGroup::backbone, b.w_proj);
    f(p + "mlp.b_proj", ParamGroup::backbone, b.b_proj);
  }
  f("final_ln.gain", ParamGroup::backbone, self.final_ln_gain);
  f("final_ln.bias", ParamGroup::backbone, self.final_ln_bias);
  f("lm_head.w", ParamGroup::lm_head, self.lm_w);
  f("lm_head.b", ParamGroup::lm_head, self.lm_b);
  f("vision_head.w1", ParamGroup::vision_head, self.vh_w1);
  f("vision_head.b1", ParamGroup::vision_head, self.vh_b1);
  f("vision_head.w2", ParamGroup::vision_head, self.vh_w2);
  f("vision_head.b2", ParamGroup::vision_head, self.vh_b2);
  f("vision_head.w3", ParamGroup::vision_head, self.vh_w3);
  f("vision_head.b3", ParamGroup::vision_head, self.vh_b3);
}

}  // namespace laver
