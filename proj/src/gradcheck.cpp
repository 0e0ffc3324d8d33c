#include "laver/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>

#include "laver/config.hpp"
#include "laver/masking.hpp"
#include "laver/model.hpp"
#include "laver/objectives.hpp"
#include "laver/rng.hpp"
#include "laver/synth.hpp"
#include "laver/train.hpp"

namespace laver {
namespace {

const char* const kLosses[] = {"lm", "mim", "ga", "cga"};

// Entries of G(x) − G(teacher) that are positive, i.e. survive the clip.
std::vector<bool> clip_pattern(const Tensor& x, const Tensor& teacher) {
  const auto unit = [](const Tensor& z) {
    std::vector<double> u(z.size());
    for (std::size_t i = 0; i < z.rows(); ++i) {
      double ss = 0.0;
      for (float v : z.row(i)) ss += static_cast<double>(v) * v;
      const double n = std::sqrt(ss);
      for (std::size_t k = 0; k < z.cols(); ++k) u[i * z.cols() + k] = z(i, k) / n;
    }
    return u;
  };
  const auto us = unit(x), ut = unit(teacher);
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<bool> keep(n * n, false);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;  // both diagonals are 1; the residual there is rounding noise
      double gs = 0.0, gt = 0.0;
      for (std::size_t k = 0; k < d; ++k) {
        gs += us[i * d + k] * us[j * d + k];
        gt += ut[i * d + k] * ut[j * d + k];
      }
      keep[i * n + j] = gs - gt > 0.0;
    }
  }
  return keep;
}

GradCheckEntry check_logits(const std::string& loss, const GradCheckConfig& cfg) {
  GradCheckEntry entry{loss, "logits", 0.0, cfg.tolerance, 0, {}, false};
  const Temperatures temps;
  for (std::size_t s = 0; s < cfg.seeds; ++s) {
    Rng rng = Rng(cfg.seed).derive(100 + s);
    const Tensor student = sample_gaussian(rng, {cfg.rows, cfg.dim}, 1.0);
    const Tensor teacher = sample_gaussian(rng, {cfg.rows, cfg.dim}, 1.0);
    std::vector<int> targets(cfg.rows);
    for (auto& t : targets) t = static_cast<int>(rng.uniform_int(cfg.dim));
    MaskPlan plan = draw_mask(rng, cfg.rows, 0.5);
    if (plan.masked_count() == 0) plan.mask[0] = true;

    const std::function<LossValue(const Tensor&)> eval = [&](const Tensor& x) {
      if (loss == "lm") return lm_loss(x, targets, 1);
      if (loss == "mim") return mim_loss(x, teacher, plan, temps);
      if (loss == "ga") return ga_loss(x, teacher);
      return cga_loss(x, teacher);
    };
    const LossValue base = eval(student);
    std::vector<double> analytic, numeric;
    for (std::size_t e = 0; e < student.size(); ++e) {
      Tensor xp = student, xm = student;
      xp[e] = static_cast<float>(student[e] + cfg.step);
      xm[e] = static_cast<float>(student[e] - cfg.step);
      if (loss == "cga" && clip_pattern(xp, teacher) != clip_pattern(xm, teacher)) {
        entry.excluded.push_back("seed " + std::to_string(s) + " row " + std::to_string(e / cfg.dim) +
                                 " col " + std::to_string(e % cfg.dim));
        continue;
      }
      const double span = static_cast<double>(xp[e]) - static_cast<double>(xm[e]);
      numeric.push_back((eval(xp).value - eval(xm).value) / span);
      analytic.push_back(base.grad[e]);
    }
    double worst = 0.0, scale = 0.0;
    for (std::size_t i = 0; i < numeric.size(); ++i) {
      worst = std::max(worst, std::abs(analytic[i] - numeric[i]));
      scale = std::max(scale, std::abs(numeric[i]));
    }
    entry.checked += numeric.size();
    if (scale > 0.0) entry.max_rel_error = std::max(entry.max_rel_error, worst / scale);
  }
  entry.pass = entry.max_rel_error < entry.tolerance && entry.checked > 0;
  return entry;
}

void perturb(ModelParams& p, Rng& rng, double stddev) {
  p.visit([&](const std::string&, ParamGroup, Tensor& t) {
    add_inplace(t, sample_gaussian(rng, t.shape(), stddev));
  });
}

// θ + alpha · direction, both stored as parameter sets.
ModelParams shifted(const ModelParams& theta, const ModelParams& dir, double alpha) {
  ModelParams out = theta;
  std::vector<const Tensor*> d;
  dir.visit([&](const std::string&, ParamGroup, const Tensor& t) { d.push_back(&t); });
  std::size_t k = 0;
  out.visit([&](const std::string&, ParamGroup, Tensor& t) {
    const Tensor& dk = *d[k++];
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<float>(t[i] + alpha * dk[i]);
  });
  return out;
}

double dot_params(const ModelParams& a, const ModelParams& b) {
  std::vector<const Tensor*> bs;
  b.visit([&](const std::string&, ParamGroup, const Tensor& t) { bs.push_back(&t); });
  std::size_t k = 0;
  double s = 0.0;
  a.visit([&](const std::string&, ParamGroup, const Tensor& t) {
    const Tensor& bk = *bs[k++];
    for (std::size_t i = 0; i < t.size(); ++i) s += static_cast<double>(t[i]) * bk[i];
  });
  return s;
}

// Difference a − b of two parameter sets, in 64 bits.
std::vector<double> diff_params(const ModelParams& a, const ModelParams& b) {
  std::vector<double> out;
  std::vector<const Tensor*> bs;
  b.visit([&](const std::string&, ParamGroup, const Tensor& t) { bs.push_back(&t); });
  std::size_t k = 0;
  a.visit([&](const std::string&, ParamGroup, const Tensor& t) {
    const Tensor& bk = *bs[k++];
    for (std::size_t i = 0; i < t.size(); ++i) out.push_back(static_cast<double>(t[i]) - bk[i]);
  });
  return out;
}

struct TinySetup {
  TrainConfig config;
  ModelParams student, teacher;
  std::vector<Sample> batch;
  std::vector<MaskPlan> plans;
  AttentionLayout mixed;
};

TinySetup tiny_setup(std::uint64_t seed) {
  TinySetup t;
  auto& c = t.config;
  c.model.n_layers = 2;
  c.model.d_model = 16;
  c.model.n_heads = 2;
  c.model.visual_logit_dim = 8;
  c.model.vision_head_hidden = 16;
  c.model.patch_size = 2;
  c.model.grid_rows = 2;
  c.model.grid_cols = 2;
  c.colors = 4;
  c.batch_size = 2;
  c.steps = 1;
  c.finalize();
  Rng rng = Rng(seed).derive(200);
  t.student = init_params(c.model, rng);
  perturb(t.student, rng, 0.1);
  t.teacher = t.student;
  perturb(t.teacher, rng, 0.2);
  t.batch = generate(rng, c.synth(), c.batch_size);
  for (std::size_t b = 0; b < t.batch.size(); ++b) {
    MaskPlan plan = draw_mask(rng, c.model.n_vision_tokens(), 0.5, static_cast<int>(b));
    if (plan.masked_count() == 0) plan.mask[b % plan.mask.size()] = true;
    t.plans.push_back(plan);
  }
  t.mixed = build_mixed_layout(sample_segments(c.model, 4));
  return t;
}

ActiveTerms only(const std::string& loss) {
  ActiveTerms a{false, false, false, false};
  if (loss == "lm") a.lm = true;
  if (loss == "mim") a.mim = true;
  if (loss == "ga") a.ga = true;
  if (loss == "cga") a.cga = true;
  return a;
}

GradCheckEntry check_model(const std::string& loss, const GradCheckConfig& cfg, bool* zero_ok) {
  GradCheckEntry entry{loss, "model", 0.0, cfg.model_tolerance, 0, {}, false};
  const TinySetup t = tiny_setup(cfg.seed);
  const ActiveTerms terms = only(loss);
  const auto value = [&](const ModelParams& p) {
    return compute_losses(t.config, p, &t.teacher, t.batch, t.plans, terms, t.mixed, false).total;
  };
  const BatchLosses bl = compute_losses(t.config, t.student, &t.teacher, t.batch, t.plans, terms, t.mixed, true);
  const double gnorm = std::sqrt(dot_params(bl.grads, bl.grads));
  if (!(gnorm > 0.0)) return entry;

  ModelParams zero = ModelParams::zeros(t.student.config);
  if (value(shifted(t.student, zero, 1.0)) != value(t.student)) *zero_ok = false;

  std::vector<ModelParams> dirs{bl.grads};
  Rng rng = Rng(cfg.seed).derive(300);
  for (int r = 0; r < 2; ++r) {
    ModelParams d = ModelParams::zeros(t.student.config);
    perturb(d, rng, 1.0);
    dirs.push_back(d);
  }
  for (const auto& d : dirs) {
    const double eps = cfg.model_step / std::sqrt(dot_params(d, d));
    const ModelParams plus = shifted(t.student, d, eps);
    const ModelParams minus = shifted(t.student, d, -eps);
    const std::vector<double> delta = diff_params(plus, minus);
    std::vector<double> g;
    bl.grads.visit([&](const std::string&, ParamGroup, const Tensor& x) {
      for (float v : x.values()) g.push_back(v);
    });
    double analytic = 0.0, dnorm = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      analytic += g[i] * delta[i];
      dnorm += delta[i] * delta[i];
    }
    const double numeric = value(plus) - value(minus);
    entry.max_rel_error = std::max(entry.max_rel_error, std::abs(numeric - analytic) / (gnorm * std::sqrt(dnorm)));
    ++entry.checked;
  }
  entry.pass = entry.max_rel_error < entry.tolerance;
  return entry;
}

}  // namespace

bool GradCheckReport::pass() const {
  if (!zero_perturbation_identical) return false;
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.pass; });
}

GradCheckReport grad_check(const GradCheckConfig& config) {
  if (config.seeds < 1 || config.rows < 2 || config.dim < 2) {
    throw std::invalid_argument("grad_check: need at least 1 seed and a 2x2 input");
  }
  if (!(config.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  GradCheckReport report;
  report.zero_perturbation_identical = true;
  for (const char* loss : kLosses) report.entries.push_back(check_logits(loss, config));
  if (config.model_level) {
    for (const char* loss : kLosses) {
      report.entries.push_back(check_model(loss, config, &report.zero_perturbation_identical));
    }
  }
  return report;
}

}  // namespace laver
