#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "laver/compare.hpp"
#include "laver/config.hpp"
#include "laver/diagnose.hpp"
#include "laver/geometry.hpp"
#include "laver/gradcheck.hpp"
#include "laver/train.hpp"

using namespace laver;

namespace {

int run_train(const std::string& config_path, const std::string& mode, std::uint64_t seed, bool seed_set,
              const std::vector<std::string>& overrides, const std::string& out, bool quiet) {
  std::string text;
  for (const auto& o : overrides) text += o + "\n";
  TrainConfig base = config_path.empty() ? TrainConfig{} : load_config(config_path);
  if (!mode.empty()) base.mode = train_mode_from_string(mode);
  if (seed_set) base.seed = seed;
  const TrainConfig config = parse_config(text, base);
  std::cerr << "training " << to_string(config.mode) << " seed " << config.seed << " for " << config.steps
            << " steps -> " << out << "\n";
  TrainSummary s;
  try {
    s = run_training(config, out, [&](const std::string& line) {
      if (!quiet) std::cout << line << "\n" << std::flush;
    });
  } catch (const TrainingAborted& e) {
    std::cerr << "aborted: " << e.what() << "\n";
    return 3;
  }
  std::printf("eval_accuracy %.4f  deep_cosine %.4f  mean_attention %.4f\n", s.eval_accuracy,
              s.probe.deep_cosine(), s.probe.mean_attention());
  std::printf("metrics %s\ncheckpoint %s\n", s.metrics_path.c_str(), s.checkpoint_path.c_str());
  return 0;
}

int run_grad_check(double tol, double model_tol, std::size_t seeds, bool logits_only) {
  GradCheckConfig cfg;
  cfg.tolerance = tol;
  cfg.model_tolerance = model_tol;
  cfg.seeds = seeds;
  cfg.model_level = !logits_only;
  const GradCheckReport report = grad_check(cfg);
  std::printf("%-5s %-7s %12s %10s %8s %9s  %s\n", "loss", "scope", "max_rel_err", "tol", "checked", "excluded",
              "result");
  for (const auto& e : report.entries) {
    std::printf("%-5s %-7s %12.3e %10.1e %8zu %9zu  %s\n", e.loss.c_str(), e.scope.c_str(), e.max_rel_error,
                e.tolerance, e.checked, e.excluded.size(), e.pass ? "ok" : "FAIL");
    for (const auto& x : e.excluded) std::printf("      excluded: %s\n", x.c_str());
  }
  std::printf("zero perturbation: %s\n", report.zero_perturbation_identical ? "identical" : "DIFFERS");
  return report.pass() ? 0 : 1;
}

int run_mask_demo(const std::string& segments, bool packed, std::size_t pad_to) {
  const auto segs = parse_segments(segments);
  AttentionLayout layout;
  if (packed) {
    std::size_t total = 0;
    for (const auto& s : segs) total += s.length;
    layout = build_packed_layout(segs, pad_to == 0 ? total : pad_to);
  } else {
    layout = build_mixed_layout(segs);
  }
  std::cout << render_layout(layout);
  std::cout << "rows:";
  for (int r : layout.row_index) std::cout << ' ' << r;
  std::cout << "\ncols:";
  for (int c : layout.col_index) std::cout << ' ' << c;
  std::cout << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"laver: masked latent visual reconstruction on a micro multimodal transformer"};
  app.require_subcommand(1);

  std::string config_path, mode, out;
  std::uint64_t seed = 1;
  std::vector<std::string> overrides;
  bool quiet = false;
  auto* train = app.add_subcommand("train", "train a model and write metrics, checkpoint and summary");
  train->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  train->add_option("--mode", mode, "baseline | mim_only | mim_ga | laver");
  auto* seed_opt = train->add_option("--seed", seed, "run seed");
  train->add_option("--set", overrides, "extra key=value overrides, applied last");
  train->add_option("--out", out, "output directory")->required();
  train->add_flag("--quiet", quiet, "do not echo metric lines");

  std::string ckpt, features, features_b, diag_out;
  DiagnoseOptions dopts;
  std::size_t rows = 0, cols = 0;
  auto* diagnose = app.add_subcommand("diagnose", "probe-set diagnostics for a checkpoint or a feature dump");
  auto* ckpt_opt = diagnose->add_option("--ckpt", ckpt, "LVCK checkpoint")->check(CLI::ExistingFile);
  auto* feat_opt = diagnose->add_option("--features", features, "LVTD [N, D] feature dump")->check(CLI::ExistingFile);
  ckpt_opt->excludes(feat_opt);
  diagnose->add_option("--features-b", features_b, "second dump for CKA/CKNNA")->check(CLI::ExistingFile)->needs(feat_opt);
  diagnose->add_option("--rows", rows, "grid rows of the dump, for the PCA map")->needs(feat_opt);
  diagnose->add_option("--cols", cols, "grid cols of the dump, for the PCA map")->needs(feat_opt);
  diagnose->add_option("--probe-seed", dopts.probe_seed, "probe set seed");
  diagnose->add_option("--probe-count", dopts.probe_count, "probe set size");
  diagnose->add_option("--k", dopts.knn, "CKNNA neighborhood size");
  diagnose->add_option("--out", diag_out, "output directory")->required();

  double tol = 1e-4, model_tol = 1e-3;
  std::size_t gc_seeds = 5;
  bool logits_only = false;
  auto* gc = app.add_subcommand("grad-check", "analytic vs central-difference gradients of every loss");
  gc->add_option("--tol", tol, "tolerance of the 64-bit logit-level check");
  gc->add_option("--model-tol", model_tol, "tolerance of the end-to-end check through a tiny model");
  gc->add_option("--seeds", gc_seeds, "random inputs per loss");
  gc->add_flag("--logits-only", logits_only, "skip the model-level check");

  std::string segments;
  bool packed = false;
  std::size_t pad_to = 0;
  auto* md = app.add_subcommand("mask-demo", "print an attention allow-matrix and its 2D-RoPE indices");
  md->add_option("--segments", segments, "e.g. v2x2,t3 (vision RxC, text N, pad N)")->required();
  md->add_flag("--packed", packed, "block-diagonal packed layout (vision segments only)");
  md->add_option("--pad-to", pad_to, "packed length, default the total segment length");

  std::string cmp_a, cmp_b;
  bool show_steps = false;
  auto* cmp = app.add_subcommand("compare", "per-step deltas and final values of two metric logs (b - a)");
  cmp->add_option("--a", cmp_a, "metrics.jsonl of run a")->required()->check(CLI::ExistingFile);
  cmp->add_option("--b", cmp_b, "metrics.jsonl of run b")->required()->check(CLI::ExistingFile);
  cmp->add_flag("--steps", show_steps, "also print the largest |delta| of every step");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return run_train(config_path, mode, seed, seed_opt->count() > 0, overrides, out, quiet);
    if (*diagnose) {
      if (ckpt.empty() && features.empty()) throw std::invalid_argument("diagnose needs --ckpt or --features");
      std::string report;
      if (!ckpt.empty()) {
        report = diagnose_checkpoint(ckpt, dopts, diag_out);
      } else {
        std::optional<std::filesystem::path> b;
        if (!features_b.empty()) b = features_b;
        report = diagnose_features(features, b, rows, cols, dopts, diag_out);
      }
      std::cout << report << "\n";
      return 0;
    }
    if (*gc) return run_grad_check(tol, model_tol, gc_seeds, logits_only);
    if (*md) return run_mask_demo(segments, packed, pad_to);
    if (*cmp) {
      const CompareReport r = compare_metrics(load_metrics(cmp_a), load_metrics(cmp_b));
      if (show_steps) {
        for (std::size_t i = 0; i < r.steps.size(); ++i) {
          double worst = 0.0;
          for (const auto& [k, d] : r.deltas[i]) worst = std::max(worst, std::abs(d));
          std::printf("step %lld  max|delta| %.6g\n", static_cast<long long>(r.steps[i]), worst);
        }
      }
      std::cout << render_table(r);
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
