#include "laver/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>

#include <json.hpp>

#include "laver/checkpoint.hpp"
#include "laver/diagnostics.hpp"

namespace laver {
namespace {

using json = nlohmann::json;

// Stream tags for Rng::derive; changing them changes every run.
constexpr std::uint64_t kInitStream = 1;
constexpr std::uint64_t kDataStream = 2;
constexpr std::uint64_t kMaskStream = 3;
constexpr std::uint64_t kEvalStream = 7;

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  Tensor out({a.rows() + b.rows(), a.cols()});
  std::copy(a.values().begin(), a.values().end(), out.data());
  std::copy(b.values().begin(), b.values().end(), out.data() + a.size());
  return out;
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  Tensor out({count, x.cols()});
  std::copy(x.data() + begin * x.cols(), x.data() + (begin + count) * x.cols(), out.data());
  return out;
}

std::size_t argmax(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

}  // namespace

Tensor sample_tokens(const ModelParams& params, const Sample& s) {
  return concat_rows(embed_image(s.pixels, params), embed_text(s.prompt, params));
}

AdamState init_adam(const ModelConfig& config) {
  return AdamState{ModelParams::zeros(config), ModelParams::zeros(config), 0};
}

double lr_at(const OptimizerConfig& cfg, std::int64_t step, std::int64_t total) {
  if (total < 1 || step < 0 || step >= total) {
    throw std::invalid_argument("lr_at: step " + std::to_string(step) + " outside [0, " +
                                std::to_string(total) + ")");
  }
  const auto warmup = static_cast<std::int64_t>(std::ceil(cfg.warmup_ratio * static_cast<double>(total)));
  if (step < warmup) return cfg.lr * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(total - warmup, 1));
  const double progress = static_cast<double>(step - warmup) / span;
  return cfg.lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
               const OptimizerConfig& cfg, double lr) {
  state.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  std::vector<const Tensor*> g;
  std::vector<Tensor*> m, v;
  grads.visit([&](const std::string&, ParamGroup, const Tensor& t) { g.push_back(&t); });
  state.m.visit([&](const std::string&, ParamGroup, Tensor& t) { m.push_back(&t); });
  state.v.visit([&](const std::string&, ParamGroup, Tensor& t) { v.push_back(&t); });
  std::size_t k = 0;
  params.visit([&](const std::string&, ParamGroup, Tensor& p) {
    const Tensor& gk = *g[k];
    Tensor& mk = *m[k];
    Tensor& vk = *v[k];
    ++k;
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double gi = gk[i];
      const double mi = cfg.beta1 * mk[i] + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * vk[i] + (1.0 - cfg.beta2) * gi * gi;
      mk[i] = static_cast<float>(mi);
      vk[i] = static_cast<float>(vi);
      const double update = (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps) + cfg.weight_decay * p[i];
      p[i] = static_cast<float>(p[i] - lr * update);
    }
  });
}

std::vector<SegmentSpec> sample_segments(const ModelConfig& config, std::size_t prompt_len) {
  return {SegmentSpec::vision(config.grid_rows, config.grid_cols, 0), SegmentSpec::text(prompt_len)};
}

BatchLosses compute_losses(const TrainConfig& config, const ModelParams& student,
                           const ModelParams* teacher, const std::vector<Sample>& batch,
                           const std::vector<MaskPlan>& plans, ActiveTerms terms,
                           const AttentionLayout& mixed, bool with_grads) {
  if (batch.empty()) throw std::invalid_argument("compute_losses: empty batch");
  const ModelConfig& mc = student.config;
  const std::size_t n_vis = mc.n_vision_tokens(), d = mc.d_model, b_count = batch.size();
  const double inv_b = 1.0 / static_cast<double>(b_count);

  BatchLosses out;
  if (with_grads) out.grads = ModelParams::zeros(mc);
  ModelParams& grads = out.grads;

  std::vector<PatchCache> pcache(b_count);
  std::vector<Tensor> vis(b_count), d_vis(b_count);
  Tape tape;

  for (std::size_t b = 0; b < b_count; ++b) {
    vis[b] = embed_image(batch[b].pixels, student, pcache[b]);
    d_vis[b] = Tensor(vis[b].shape());
  }

  // Forward 1: image + prompt on the mixed layout, answer supervised at the last position.
  for (std::size_t b = 0; b < b_count && terms.lm; ++b) {
    const Sample& s = batch[b];
    const Tensor text = embed_text(s.prompt, student);
    const Tensor tokens = concat_rows(vis[b], text);
    if (tokens.rows() != mixed.length) {
      throw std::invalid_argument("compute_losses: sample length does not match the mixed layout");
    }
    const std::size_t last = tokens.rows() - 1;
    const Tensor final = with_grads ? forward_train(student, tokens, mixed, tape)
                                    : forward(student, tokens, mixed, false).final_hidden;
    const Tensor h_last = slice_rows(final, last, 1);
    const Tensor logits = lm_logits(student, h_last);
    const int target = s.answer;
    const LossValue lm = lm_loss(logits, std::span<const int>(&target, 1), 0);
    out.lm += lm.value * inv_b;
    if (static_cast<int>(argmax(logits.row(0))) == s.answer) out.accuracy += inv_b;
    if (!with_grads) continue;

    Tensor d_logits = lm.grad;
    for (auto& v : d_logits.values()) v = static_cast<float>(v * inv_b);
    const Tensor d_last = lm_logits_backward(student, h_last, d_logits, grads);
    Tensor d_final({tokens.rows(), d});
    std::copy(d_last.values().begin(), d_last.values().end(), d_final.data() + last * d);
    const Tensor d_tokens = backward(student, tape, d_final, grads);
    add_inplace(d_vis[b], slice_rows(d_tokens, 0, n_vis));
    embed_text_backward(s.prompt, slice_rows(d_tokens, n_vis, text.rows()), grads);
  }

  std::size_t total_masked = 0;
  if (terms.mim) {
    if (plans.size() != b_count) throw std::invalid_argument("compute_losses: one mask plan per image required");
    for (const auto& p : plans) total_masked += p.masked_count();
  }
  out.masked_tokens = total_masked;
  const bool visual = (terms.mim && total_masked > 0) || terms.ga || terms.cga;
  if (visual) {
    if (teacher == nullptr) throw std::invalid_argument("compute_losses: visual terms need a teacher");
    const std::size_t pack = config.pack_images;
    const std::size_t pad_to = pack * n_vis;
    for (std::size_t first = 0; first < b_count; first += pack) {
      const std::size_t count = std::min(pack, b_count - first);
      std::vector<SegmentSpec> images;
      for (std::size_t i = 0; i < count; ++i) {
        images.push_back(SegmentSpec::vision(mc.grid_rows, mc.grid_cols, static_cast<int>(i)));
      }
      const AttentionLayout layout = build_packed_layout(images, pad_to);
      const std::vector<std::size_t> vis_pos = layout.positions_of(SegmentKind::vision);

      // Teacher: unmasked images, no tape, no gradient.
      Tensor tea_tokens({pad_to, d});
      Tensor stu_tokens({pad_to, d});
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t b = first + i;
        const Tensor tv = embed_image(batch[b].pixels, *teacher);
        std::copy(tv.values().begin(), tv.values().end(), tea_tokens.data() + i * n_vis * d);
        const Tensor sv = terms.mim ? apply_mask(vis[b], plans[b], student.mask_embedding) : vis[b];
        std::copy(sv.values().begin(), sv.values().end(), stu_tokens.data() + i * n_vis * d);
      }
      const Tensor tea_final = forward(*teacher, tea_tokens, layout, false).final_hidden;
      const Tensor tea_z = vision_head(*teacher, gather_rows(tea_final, vis_pos));

      const Tensor stu_final = with_grads ? forward_train(student, stu_tokens, layout, tape)
                                          : forward(student, stu_tokens, layout, false).final_hidden;
      VisionHeadCache vcache;
      const Tensor stu_z = vision_head(student, gather_rows(stu_final, vis_pos), vcache);
      Tensor d_z(stu_z.shape());

      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t b = first + i;
        const Tensor zs = slice_rows(stu_z, i * n_vis, n_vis);
        const Tensor zt = slice_rows(tea_z, i * n_vis, n_vis);
        float* dz = d_z.data() + i * n_vis * stu_z.cols();
        const auto add_grad = [&](const Tensor& g, double w) {
          if (!with_grads || w == 0.0) return;
          for (std::size_t e = 0; e < g.size(); ++e) dz[e] += static_cast<float>(w * g[e]);
        };
        if (terms.mim && total_masked > 0) {
          const LossValue m = mim_loss(zs, zt, plans[b], config.temps);
          const double share = static_cast<double>(plans[b].masked_count()) / static_cast<double>(total_masked);
          out.mim += m.value * share;
          add_grad(m.grad, config.weights.mim * share);
        }
        if (terms.ga) {
          const LossValue g = ga_loss(zs, zt);
          out.ga += g.value * inv_b;
          add_grad(g.grad, config.weights.cga * inv_b);
        }
        if (terms.cga) {
          const LossValue g = cga_loss(zs, zt);
          out.cga += g.value * inv_b;
          add_grad(g.grad, config.weights.cga * inv_b);
        }
      }
      if (!with_grads) continue;

      const Tensor d_hidden = vision_head_backward(student, vcache, d_z, grads);
      Tensor d_final({pad_to, d});
      scatter_add_rows(d_final, vis_pos, d_hidden);
      const Tensor d_tokens = backward(student, tape, d_final, grads);
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t b = first + i;
        for (std::size_t n = 0; n < n_vis; ++n) {
          auto src = d_tokens.row(i * n_vis + n);
          if (terms.mim && plans[b].mask[n]) {
            for (std::size_t e = 0; e < d; ++e) grads.mask_embedding[e] += src[e];
          } else {
            auto dst = d_vis[b].row(n);
            for (std::size_t e = 0; e < d; ++e) dst[e] += src[e];
          }
        }
      }
    }
  }

  if (with_grads) {
    for (std::size_t b = 0; b < b_count; ++b) embed_image_backward(student, pcache[b], d_vis[b], grads);
  }
  out.total = out.lm + config.weights.mim * out.mim + config.weights.cga * (out.ga + out.cga);
  return out;
}

TrainState init_state(const TrainConfig& config) {
  TrainConfig cfg = config;
  cfg.finalize();
  const Rng root(cfg.seed);
  Rng init_rng = root.derive(kInitStream);
  TrainState s{cfg,
               init_params(cfg.model, init_rng),
               std::nullopt,
               init_adam(cfg.model),
               root.derive(kDataStream),
               root.derive(kMaskStream),
               0,
               build_mixed_layout(sample_segments(cfg.model, 4))};
  if (active_terms(cfg.mode).any_visual()) s.teacher = init_teacher(s.params);
  return s;
}

StepRecord train_step(TrainState& state, const std::vector<Sample>& batch) {
  const TrainConfig& cfg = state.config;
  if (state.step >= cfg.steps) throw std::logic_error("train_step: run already finished");
  const ActiveTerms terms = active_terms(cfg.mode);
  const std::int64_t t = state.step;

  StepRecord rec;
  rec.mask_ratio = ratio_at(cfg.mask, t);
  std::vector<MaskPlan> plans;
  if (terms.mim) {
    for (std::size_t b = 0; b < batch.size(); ++b) {
      plans.push_back(draw_mask(state.mask_rng, cfg.model.n_vision_tokens(), rec.mask_ratio, static_cast<int>(b)));
    }
  }
  const ModelParams* teacher = state.teacher ? &state.teacher->params : nullptr;
  BatchLosses losses = compute_losses(cfg, state.params, teacher, batch, plans, terms, state.mixed);

  rec.step = t + 1;
  rec.lm = losses.lm;
  rec.mim = losses.mim;
  rec.ga = losses.ga;
  rec.cga = losses.cga;
  rec.total = losses.total;
  rec.accuracy = losses.accuracy;
  rec.masked_tokens = losses.masked_tokens;
  rec.lr = lr_at(cfg.optim, t, cfg.steps);
  rec.ema_decay = decay_at(cfg.ema, t + 1);
  if (!std::isfinite(rec.total)) {
    throw TrainingAborted("non-finite loss at step " + std::to_string(rec.step), rec);
  }

  adam_step(state.params, losses.grads, state.adam, cfg.optim, rec.lr);
  state.step = t + 1;
  if (state.teacher) rec.teacher_updated = maybe_update(*state.teacher, state.params, cfg.ema, state.step);
  return rec;
}

double ProbeReport::mean_attention() const {
  if (attention.empty()) return 0.0;
  double s = 0.0;
  for (double a : attention) s += a;
  return s / static_cast<double>(attention.size());
}

ProbeReport evaluate_probe(const ModelParams& params, const std::vector<Sample>& probe,
                           const AttentionLayout& mixed) {
  if (probe.empty()) throw std::invalid_argument("evaluate_probe: empty probe set");
  const std::vector<std::size_t> vis = mixed.positions_of(SegmentKind::vision);
  ProbeReport r;
  r.cosine.assign(params.config.n_layers + 1, 0.0);
  r.attention.assign(params.config.n_layers, 0.0);
  for (const auto& s : probe) {
    const ForwardTrace trace = forward(params, sample_tokens(params, s), mixed, true);
    const std::size_t last = mixed.length - 1;
    const std::vector<std::size_t> query{last};
    const auto cos = homogenization_profile(trace, vis);
    const auto att = attention_allocation(trace, vis, query);
    for (std::size_t l = 0; l < cos.size(); ++l) r.cosine[l] += cos[l];
    for (std::size_t l = 0; l < att.size(); ++l) r.attention[l] += att[l];
    const Tensor logits = lm_logits(params, slice_rows(trace.final_hidden, last, 1));
    if (static_cast<int>(argmax(logits.row(0))) == s.answer) r.accuracy += 1.0;
  }
  const double n = static_cast<double>(probe.size());
  for (auto& v : r.cosine) v /= n;
  for (auto& v : r.attention) v /= n;
  r.accuracy /= n;
  return r;
}

double evaluate_accuracy(const ModelParams& params, const std::vector<Sample>& samples,
                         const AttentionLayout& mixed) {
  if (samples.empty()) throw std::invalid_argument("evaluate_accuracy: no samples");
  std::size_t hits = 0;
  for (const auto& s : samples) {
    const Tensor final = forward(params, sample_tokens(params, s), mixed, false).final_hidden;
    const Tensor logits = lm_logits(params, slice_rows(final, final.rows() - 1, 1));
    if (static_cast<int>(argmax(logits.row(0))) == s.answer) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

namespace {

json probe_json(const ProbeReport& r) {
  return {{"cosine", r.cosine}, {"attention", r.attention}, {"probe_accuracy", r.accuracy}};
}

}  // namespace

TrainSummary run_training(const TrainConfig& config, const std::filesystem::path& out_dir,
                          const std::function<void(const std::string&)>& on_log) {
  TrainState state = init_state(config);
  const TrainConfig& cfg = state.config;
  std::filesystem::create_directories(out_dir);

  TrainSummary summary;
  summary.metrics_path = out_dir / "metrics.jsonl";
  summary.checkpoint_path = out_dir / "checkpoint.lvck";
  std::ofstream metrics(summary.metrics_path);
  if (!metrics) throw std::runtime_error("cannot write " + summary.metrics_path.string());

  const SynthConfig synth = cfg.synth();
  Rng probe_rng(cfg.probe_seed);
  const std::vector<Sample> probe = generate(probe_rng, synth, cfg.probe_count);
  const auto started = std::chrono::steady_clock::now();

  const auto emit = [&](json line) {
    if (cfg.wall_clock) {
      line["wall_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    }
    const std::string text = line.dump();
    metrics << text << '\n';
    metrics.flush();
    if (!metrics) throw std::runtime_error("write failed: " + summary.metrics_path.string());
    if (on_log) on_log(text);
  };

  double sum_lm = 0, sum_mim = 0, sum_ga = 0, sum_cga = 0, sum_total = 0, sum_acc = 0;
  std::int64_t window = 0;
  for (std::int64_t t = 0; t < cfg.steps; ++t) {
    const std::vector<Sample> batch = generate(state.data_rng, synth, cfg.batch_size);
    StepRecord rec;
    try {
      rec = train_step(state, batch);
    } catch (const TrainingAborted& e) {
      const auto& r = e.record();
      emit({{"step", r.step}, {"mode", to_string(cfg.mode)}, {"aborted", true}, {"lm", r.lm},
            {"mim", r.mim}, {"ga", r.ga}, {"cga", r.cga}, {"total", r.total}});
      throw;
    }
    sum_lm += rec.lm;
    sum_mim += rec.mim;
    sum_ga += rec.ga;
    sum_cga += rec.cga;
    sum_total += rec.total;
    sum_acc += rec.accuracy;
    ++window;
    if (rec.step % cfg.log_every != 0 && rec.step != cfg.steps) continue;

    const double w = static_cast<double>(window);
    json line = {{"step", rec.step},
                 {"mode", to_string(cfg.mode)},
                 {"lm", sum_lm / w},
                 {"mim", sum_mim / w},
                 {"ga", sum_ga / w},
                 {"cga", sum_cga / w},
                 {"total", sum_total / w},
                 {"train_accuracy", sum_acc / w},
                 {"mask_ratio", rec.mask_ratio},
                 {"ema_decay", rec.ema_decay},
                 {"lr", rec.lr},
                 {"teacher_step", state.teacher ? state.teacher->last_update_step : 0}};
    if (rec.step % cfg.diag_every == 0 || rec.step == cfg.steps) {
      line["diagnostics"] = probe_json(evaluate_probe(state.params, probe, state.mixed));
    }
    emit(std::move(line));
    sum_lm = sum_mim = sum_ga = sum_cga = sum_total = sum_acc = 0.0;
    window = 0;
  }

  summary.steps = state.step;
  summary.probe = evaluate_probe(state.params, probe, state.mixed);
  Rng eval_rng = Rng(cfg.probe_seed).derive(kEvalStream);
  summary.eval_accuracy = evaluate_accuracy(state.params, generate(eval_rng, synth, cfg.eval_count), state.mixed);

  save_checkpoint(summary.checkpoint_path,
                  make_checkpoint(to_text(cfg), state.params, state.teacher ? &state.teacher->params : nullptr));

  json s = probe_json(summary.probe);
  s["steps"] = summary.steps;
  s["mode"] = to_string(cfg.mode);
  s["seed"] = cfg.seed;
  s["eval_accuracy"] = summary.eval_accuracy;
  s["deep_cosine"] = summary.probe.deep_cosine();
  s["mean_attention"] = summary.probe.mean_attention();
  std::ofstream sj(out_dir / "summary.json");
  if (!sj) throw std::runtime_error("cannot write " + (out_dir / "summary.json").string());
  sj << s.dump(2) << '\n';
  return summary;
}

}  // namespace laver
