#include "laver/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

namespace laver {
namespace {

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  add_row_bias(y, b);
  return y;
}

// Returns dx; accumulates dw and db.
Tensor linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor& dw, Tensor& db) {
  matmul_tn_accumulate(x, dy, dw);
  accumulate_column_sums(dy, db);
  return matmul_nt(dy, w);
}

void check_finite(const Tensor& x, std::size_t layer) {
  if (!x.all_finite()) {
    throw NumericFault("non-finite activation in decoder layer " + std::to_string(layer), layer);
  }
}

// Splits qkv [T, 3D] into three [T, D] tensors.
void split_qkv(const Tensor& qkv, std::size_t d, Tensor& q, Tensor& k, Tensor& v) {
  const std::size_t t = qkv.rows();
  q = Tensor({t, d});
  k = Tensor({t, d});
  v = Tensor({t, d});
  for (std::size_t i = 0; i < t; ++i) {
    const float* src = qkv.data() + i * 3 * d;
    std::copy(src, src + d, q.data() + i * d);
    std::copy(src + d, src + 2 * d, k.data() + i * d);
    std::copy(src + 2 * d, src + 3 * d, v.data() + i * d);
  }
}

Tensor join_qkv(const Tensor& q, const Tensor& k, const Tensor& v) {
  const std::size_t t = q.rows(), d = q.cols();
  Tensor out({t, 3 * d});
  for (std::size_t i = 0; i < t; ++i) {
    float* dst = out.data() + i * 3 * d;
    std::copy(q.data() + i * d, q.data() + (i + 1) * d, dst);
    std::copy(k.data() + i * d, k.data() + (i + 1) * d, dst + d);
    std::copy(v.data() + i * d, v.data() + (i + 1) * d, dst + 2 * d);
  }
  return out;
}

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using HeadView = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using ConstHeadView = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Columns [h·dh, (h+1)·dh) of a [T, D] tensor as a T × dh matrix.
ConstHeadView head_of(const Tensor& x, std::size_t h, std::size_t dh) {
  return ConstHeadView(x.data() + h * dh, static_cast<Eigen::Index>(x.rows()),
                       static_cast<Eigen::Index>(dh), Eigen::OuterStride<>(static_cast<Eigen::Index>(x.cols())));
}
HeadView head_of(Tensor& x, std::size_t h, std::size_t dh) {
  return HeadView(x.data() + h * dh, static_cast<Eigen::Index>(x.rows()), static_cast<Eigen::Index>(dh),
                  Eigen::OuterStride<>(static_cast<Eigen::Index>(x.cols())));
}

// Masked multi-head attention. Blocked entries never enter the softmax, so
// their probability is exactly zero; a query with no allowed key outputs zero.
void attention_forward(const Tensor& q, const Tensor& k, const Tensor& v,
                       const AttentionLayout& layout, std::size_t heads, Tensor& probs,
                       Tensor& out) {
  const std::size_t t = layout.length, d = q.cols(), dh = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  probs = Tensor({heads, t, t});
  out = Tensor({t, d});
  RowMat s(t, t);
  for (std::size_t h = 0; h < heads; ++h) {
    s.noalias() = head_of(q, h, dh) * head_of(k, h, dh).transpose();
    float* ph = probs.data() + h * t * t;
    for (std::size_t i = 0; i < t; ++i) {
      const std::uint8_t* allow = layout.allow.data() + i * t;
      float* si = s.data() + i * t;
      float mx = -std::numeric_limits<float>::infinity();
      bool any = false;
      for (std::size_t j = 0; j < t; ++j) {
        if (!allow[j]) continue;
        si[j] *= scale;
        mx = std::max(mx, si[j]);
        any = true;
      }
      if (!any) continue;
      double sum = 0.0;
      for (std::size_t j = 0; j < t; ++j) {
        if (!allow[j]) continue;
        si[j] = std::exp(si[j] - mx);
        sum += si[j];
      }
      const float inv = static_cast<float>(1.0 / sum);
      float* pr = ph + i * t;
      for (std::size_t j = 0; j < t; ++j) {
        if (allow[j]) pr[j] = si[j] * inv;
      }
    }
    const Eigen::Map<const RowMat> p(ph, static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(t));
    head_of(out, h, dh).noalias() = p * head_of(v, h, dh);
  }
}

void attention_backward(const LayerCache& c, const AttentionLayout& layout, std::size_t heads,
                        const Tensor& d_out, Tensor& dq, Tensor& dk, Tensor& dv) {
  const std::size_t t = layout.length, d = c.q.cols(), dh = d / heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(dh));
  dq = Tensor({t, d});
  dk = Tensor({t, d});
  dv = Tensor({t, d});
  RowMat dp(t, t);
  for (std::size_t h = 0; h < heads; ++h) {
    const Eigen::Map<const RowMat> p(c.probs.data() + h * t * t, static_cast<Eigen::Index>(t),
                                     static_cast<Eigen::Index>(t));
    const auto d_oh = head_of(d_out, h, dh);
    dp.noalias() = d_oh * head_of(c.v, h, dh).transpose();
    head_of(dv, h, dh).noalias() += p.transpose() * d_oh;
    // dp becomes dS = P ∘ (dP − Σ_j P·dP) · scale in place.
    for (std::size_t i = 0; i < t; ++i) {
      const float* pr = p.data() + i * t;
      float* di = dp.data() + i * t;
      double row_dot = 0.0;
      for (std::size_t j = 0; j < t; ++j) row_dot += static_cast<double>(pr[j]) * di[j];
      const float rd = static_cast<float>(row_dot);
      for (std::size_t j = 0; j < t; ++j) di[j] = pr[j] == 0.0f ? 0.0f : pr[j] * (di[j] - rd) * scale;
    }
    head_of(dq, h, dh).noalias() += dp * head_of(c.k, h, dh);
    head_of(dk, h, dh).noalias() += dp.transpose() * head_of(c.q, h, dh);
  }
}

Tensor run_decoder(const ModelParams& params, const Tensor& tokens, const AttentionLayout& layout,
                   Tape* tape, ForwardTrace* trace) {
  const auto& cfg = params.config;
  const std::size_t d = cfg.d_model, heads = cfg.n_heads;
  if (tokens.rank() != 2 || tokens.cols() != d || tokens.rows() != layout.length) {
    throw std::invalid_argument("forward: tokens " + shape_string(tokens.shape()) +
                                " do not match layout length " + std::to_string(layout.length) +
                                " x d_model " + std::to_string(d));
  }
  const RopeTable rope(layout.row_index, layout.col_index, cfg.head_dim(), cfg.rope_base);
  if (tape) {
    tape->layers.assign(cfg.n_layers, LayerCache{});
    tape->layout = &layout;
  }
  if (trace) trace->hidden.push_back(tokens);

  Tensor x = tokens;
  for (std::size_t l = 0; l < cfg.n_layers; ++l) {
    const BlockParams& b = params.blocks[l];
    LayerCache local;
    LayerCache& c = tape ? tape->layers[l] : local;

    c.ln1_out = layernorm(x, b.ln1_gain, b.ln1_bias, c.ln1);
    split_qkv(linear(c.ln1_out, b.w_qkv, b.b_qkv), d, c.q, c.k, c.v);
    rope.rotate(c.q, heads);
    rope.rotate(c.k, heads);
    attention_forward(c.q, c.k, c.v, layout, heads, c.probs, c.attn);
    add_inplace(x, linear(c.attn, b.w_out, b.b_out));

    c.ln2_out = layernorm(x, b.ln2_gain, b.ln2_bias, c.ln2);
    c.fc_pre = linear(c.ln2_out, b.w_fc, b.b_fc);
    c.fc_act = gelu(c.fc_pre);
    add_inplace(x, linear(c.fc_act, b.w_proj, b.b_proj));
    check_finite(x, l);

    if (trace) {
      trace->hidden.push_back(x);
      trace->attention.push_back(c.probs);
    }
  }
  LayerNormStats final_stats;
  Tensor out = layernorm(x, params.final_ln_gain, params.final_ln_bias,
                         tape ? tape->final_ln : final_stats);
  return out;
}

void relu_inplace(Tensor& x) {
  for (auto& v : x.values()) v = v > 0.0f ? v : 0.0f;
}

Tensor relu_backward(const Tensor& dy, const Tensor& pre) {
  Tensor dx = dy;
  for (std::size_t i = 0; i < dx.size(); ++i)
    if (!(pre[i] > 0.0f)) dx[i] = 0.0f;
  return dx;
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || vocab_size == 0) {
    throw std::invalid_argument("model config: layers, d_model, heads and vocab must be positive");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("model config: d_model " + std::to_string(d_model) +
                                " is not divisible by n_heads " + std::to_string(n_heads));
  }
  if (head_dim() % 4 != 0) {
    throw std::invalid_argument("model config: head dim " + std::to_string(head_dim()) +
                                " must be divisible by 4 for 2D-RoPE");
  }
  if (visual_logit_dim == 0 || vision_head_hidden == 0 || patch_size == 0 || grid_rows == 0 ||
      grid_cols == 0 || channels == 0) {
    throw std::invalid_argument("model config: vision dimensions must be positive");
  }
  if (!(init_std > 0.0)) throw std::invalid_argument("model config: init_std must be positive");
}

ModelParams ModelParams::zeros(const ModelConfig& c) {
  c.validate();
  const std::size_t d = c.d_model, f = c.patch_features(), v = c.vocab_size,
                    hv = c.vision_head_hidden, dv = c.visual_logit_dim, m = c.mlp_hidden();
  ModelParams p;
  p.config = c;
  p.patch_w1 = Tensor({f, d});
  p.patch_b1 = Tensor({d});
  p.patch_w2 = Tensor({d, d});
  p.patch_b2 = Tensor({d});
  p.token_embedding = Tensor({v, d});
  p.mask_embedding = Tensor({d});
  p.blocks.resize(c.n_layers);
  for (auto& b : p.blocks) {
    b.ln1_gain = Tensor({d});
    b.ln1_bias = Tensor({d});
    b.w_qkv = Tensor({d, 3 * d});
    b.b_qkv = Tensor({3 * d});
    b.w_out = Tensor({d, d});
    b.b_out = Tensor({d});
    b.ln2_gain = Tensor({d});
    b.ln2_bias = Tensor({d});
    b.w_fc = Tensor({d, m});
    b.b_fc = Tensor({m});
    b.w_proj = Tensor({m, d});
    b.b_proj = Tensor({d});
  }
  p.final_ln_gain = Tensor({d});
  p.final_ln_bias = Tensor({d});
  p.lm_w = Tensor({d, v});
  p.lm_b = Tensor({v});
  p.vh_w1 = Tensor({d, hv});
  p.vh_b1 = Tensor({hv});
  p.vh_w2 = Tensor({hv, hv});
  p.vh_b2 = Tensor({hv});
  p.vh_w3 = Tensor({hv, dv});
  p.vh_b3 = Tensor({dv});
  return p;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, ParamGroup, const Tensor& t) { n += t.size(); });
  return n;
}

bool ModelParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, ParamGroup, const Tensor& t) { ok = ok && t.all_finite(); });
  return ok;
}

ModelParams init_params(const ModelConfig& config, Rng& rng) {
  ModelParams p = ModelParams::zeros(config);
  p.visit([&](const std::string& name, ParamGroup, Tensor& t) {
    if (name.ends_with(".gain")) {
      t.fill(1.0f);
    } else if (t.rank() == 2 || name == "embed.mask") {
      t = sample_gaussian(rng, t.shape(), config.init_std);
    }
  });
  return p;
}

bool same_structure(const ModelParams& a, const ModelParams& b) {
  std::vector<std::pair<std::string, std::vector<std::size_t>>> sa, sb;
  a.visit([&](const std::string& n, ParamGroup, const Tensor& t) { sa.emplace_back(n, t.shape()); });
  b.visit([&](const std::string& n, ParamGroup, const Tensor& t) { sb.emplace_back(n, t.shape()); });
  return sa == sb;
}

ForwardTrace forward(const ModelParams& params, const Tensor& tokens,
                     const AttentionLayout& layout, bool capture) {
  ForwardTrace trace;
  trace.final_hidden = run_decoder(params, tokens, layout, nullptr, capture ? &trace : nullptr);
  return trace;
}

Tensor forward_train(const ModelParams& params, const Tensor& tokens,
                     const AttentionLayout& layout, Tape& tape) {
  return run_decoder(params, tokens, layout, &tape, nullptr);
}

Tensor backward(const ModelParams& params, const Tape& tape, const Tensor& d_final,
                ModelParams& grads) {
  const auto& cfg = params.config;
  const std::size_t heads = cfg.n_heads;
  if (tape.layout == nullptr || tape.layers.size() != cfg.n_layers) {
    throw std::invalid_argument("backward: tape was not recorded for this model");
  }
  const AttentionLayout& layout = *tape.layout;
  const RopeTable rope(layout.row_index, layout.col_index, cfg.head_dim(), cfg.rope_base);

  Tensor d = layernorm_backward(d_final, params.final_ln_gain, tape.final_ln,
                                grads.final_ln_gain, grads.final_ln_bias);
  for (std::size_t l = cfg.n_layers; l-- > 0;) {
    const BlockParams& b = params.blocks[l];
    BlockParams& g = grads.blocks[l];
    const LayerCache& c = tape.layers[l];

    Tensor d_act = linear_backward(c.fc_act, b.w_proj, d, g.w_proj, g.b_proj);
    Tensor d_pre = gelu_backward(d_act, c.fc_pre);
    Tensor d_ln2 = linear_backward(c.ln2_out, b.w_fc, d_pre, g.w_fc, g.b_fc);
    add_inplace(d, layernorm_backward(d_ln2, b.ln2_gain, c.ln2, g.ln2_gain, g.ln2_bias));

    Tensor d_attn = linear_backward(c.attn, b.w_out, d, g.w_out, g.b_out);
    Tensor dq, dk, dv;
    attention_backward(c, layout, heads, d_attn, dq, dk, dv);
    rope.rotate(dq, heads, /*inverse=*/true);
    rope.rotate(dk, heads, /*inverse=*/true);
    Tensor d_ln1 = linear_backward(c.ln1_out, b.w_qkv, join_qkv(dq, dk, dv), g.w_qkv, g.b_qkv);
    add_inplace(d, layernorm_backward(d_ln1, b.ln1_gain, c.ln1, g.ln1_gain, g.ln1_bias));
  }
  return d;
}

Tensor patchify(const Tensor& pixels, const ModelConfig& config) {
  const std::size_t p = config.patch_size, ch = config.channels;
  const std::size_t h = config.grid_rows * p, w = config.grid_cols * p;
  if (pixels.rank() != 3 || pixels.dim(0) != h || pixels.dim(1) != w || pixels.dim(2) != ch) {
    throw std::invalid_argument("patchify: image " + shape_string(pixels.shape()) + " does not match " +
                                shape_string({h, w, ch}) + " (grid " +
                                std::to_string(config.grid_rows) + "x" +
                                std::to_string(config.grid_cols) + ", patch " + std::to_string(p) +
                                ")");
  }
  Tensor out({config.n_vision_tokens(), config.patch_features()});
  for (std::size_t r = 0; r < config.grid_rows; ++r) {
    for (std::size_t c = 0; c < config.grid_cols; ++c) {
      float* dst = out.data() + (r * config.grid_cols + c) * config.patch_features();
      for (std::size_t py = 0; py < p; ++py) {
        const float* src = pixels.data() + ((r * p + py) * w + c * p) * ch;
        std::copy(src, src + p * ch, dst + py * p * ch);
      }
    }
  }
  return out;
}

Tensor embed_image(const Tensor& pixels, const ModelParams& params) {
  PatchCache cache;
  return embed_image(pixels, params, cache);
}

Tensor embed_image(const Tensor& pixels, const ModelParams& params, PatchCache& cache) {
  cache.patches = patchify(pixels, params.config);
  cache.pre = linear(cache.patches, params.patch_w1, params.patch_b1);
  cache.act = gelu(cache.pre);
  return linear(cache.act, params.patch_w2, params.patch_b2);
}

void embed_image_backward(const ModelParams& params, const PatchCache& cache, const Tensor& d_tokens,
                          ModelParams& grads) {
  Tensor d_act = linear_backward(cache.act, params.patch_w2, d_tokens, grads.patch_w2, grads.patch_b2);
  Tensor d_pre = gelu_backward(d_act, cache.pre);
  matmul_tn_accumulate(cache.patches, d_pre, grads.patch_w1);
  accumulate_column_sums(d_pre, grads.patch_b1);
}

Tensor embed_text(std::span<const int> ids, const ModelParams& params) {
  const std::size_t d = params.config.d_model;
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= params.config.vocab_size) {
      throw std::invalid_argument("embed_text: token id " + std::to_string(ids[i]) +
                                  " outside vocabulary");
    }
    auto src = params.token_embedding.row(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

void embed_text_backward(std::span<const int> ids, const Tensor& d_rows, ModelParams& grads) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto dst = grads.token_embedding.row(static_cast<std::size_t>(ids[i]));
    auto src = d_rows.row(i);
    for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
  }
}

Tensor vision_head(const ModelParams& params, const Tensor& hidden) {
  VisionHeadCache cache;
  return vision_head(params, hidden, cache);
}

Tensor vision_head(const ModelParams& params, const Tensor& hidden, VisionHeadCache& cache) {
  if (hidden.rank() != 2 || hidden.cols() != params.config.d_model) {
    throw std::invalid_argument("vision_head: expected [N, " + std::to_string(params.config.d_model) +
                                "], got " + shape_string(hidden.shape()));
  }
  cache.input = hidden;
  cache.pre1 = linear(hidden, params.vh_w1, params.vh_b1);
  cache.act1 = cache.pre1;
  relu_inplace(cache.act1);
  cache.pre2 = linear(cache.act1, params.vh_w2, params.vh_b2);
  cache.act2 = cache.pre2;
  relu_inplace(cache.act2);
  return linear(cache.act2, params.vh_w3, params.vh_b3);
}

Tensor vision_head_backward(const ModelParams& params, const VisionHeadCache& cache,
                            const Tensor& d_logits, ModelParams& grads) {
  Tensor d2 = linear_backward(cache.act2, params.vh_w3, d_logits, grads.vh_w3, grads.vh_b3);
  Tensor d1 = linear_backward(cache.act1, params.vh_w2, relu_backward(d2, cache.pre2), grads.vh_w2,
                              grads.vh_b2);
  return linear_backward(cache.input, params.vh_w1, relu_backward(d1, cache.pre1), grads.vh_w1,
                         grads.vh_b1);
}

Tensor lm_logits(const ModelParams& params, const Tensor& hidden) {
  if (hidden.rank() != 2 || hidden.cols() != params.config.d_model) {
    throw std::invalid_argument("lm_logits: expected [T, d_model], got " + shape_string(hidden.shape()));
  }
  return linear(hidden, params.lm_w, params.lm_b);
}

Tensor lm_logits_backward(const ModelParams& params, const Tensor& hidden, const Tensor& d_logits,
                          ModelParams& grads) {
  return linear_backward(hidden, params.lm_w, d_logits, grads.lm_w, grads.lm_b);
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  Tensor out({rows.size(), x.cols()});
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto src = x.row(rows[k]);
    std::copy(src.begin(), src.end(), out.row(k).begin());
  }
  return out;
}

void scatter_add_rows(Tensor& dst, std::span<const std::size_t> rows, const Tensor& src) {
  for (std::size_t k = 0; k < rows.size(); ++k) {
    auto d = dst.row(rows[k]);
    auto s = src.row(k);
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += s[j];
  }
}

}  // namespace laver
