#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "laver/checkpoint.hpp"
#include "laver/compare.hpp"
#include "laver/config.hpp"
#include "laver/diagnose.hpp"
#include "laver/gradcheck.hpp"
#include "laver/tensor_io.hpp"
#include "laver/train.hpp"

using namespace laver;
namespace fs = std::filesystem;

namespace {

const char* kTiny =
    "model.layers = 1\n"
    "model.d_model = 16\n"
    "model.heads = 1\n"
    "model.visual_logit_dim = 8\n"
    "model.vision_head_hidden = 16\n"
    "model.patch = 2\n"
    "model.grid_rows = 2\n"
    "model.grid_cols = 3\n"
    "batch_size = 2\n"
    "steps = 10\n"
    "log_every = 4\n"
    "diag_every = 8\n"
    "probe_count = 4\n"
    "eval_count = 8\n"
    "mask.ratio = 0.5\n"
    "ema.update_every = 2\n";

TrainConfig tiny(const std::string& extra = "") { return parse_config(extra, parse_config(kTiny)); }

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path scratch(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("laver_test_" + name);
  fs::remove_all(d);
  return d;
}

bool params_equal(const ModelParams& a, const ModelParams& b) {
  if (!same_structure(a, b)) return false;
  std::vector<const Tensor*> other;
  b.visit([&](const std::string&, ParamGroup, const Tensor& t) { other.push_back(&t); });
  std::size_t k = 0;
  bool eq = true;
  a.visit([&](const std::string&, ParamGroup, const Tensor& t) { eq &= t == *other[k++]; });
  return eq;
}

}  // namespace

TEST_CASE("config: text round trip") {
  TrainConfig c = tiny("mode = mim_ga\nseed = 77\nloss.w_cga = 0.5\nema.schedule = constant\n");
  const std::string text = to_text(c);
  const TrainConfig again = parse_config(text);
  CHECK(to_text(again) == text);
  CHECK(again.mode == TrainMode::mim_ga);
  CHECK(again.seed == 77);
  CHECK(again.weights.cga == 0.5);
  CHECK(again.model.d_model == 16);
  CHECK(again.ema.schedule == EmaSchedule::constant);
}

TEST_CASE("config: comments, blanks and rejection with line numbers") {
  const TrainConfig c = parse_config("# header\n\nsteps = 5   # trailing\n");
  CHECK(c.steps == 5);
  const auto fails_on_line = [](const std::string& text, const std::string& line) {
    try {
      parse_config(text);
    } catch (const std::invalid_argument& e) {
      return std::string(e.what()).find("line " + line) != std::string::npos;
    }
    return false;
  };
  CHECK(fails_on_line("steps = 5\nbogus = 1\n", "2"));
  CHECK(fails_on_line("steps = 5\nsteps = 6\n", "2"));
  CHECK(fails_on_line("steps = five\n", "1"));
  CHECK(fails_on_line("\n\nsteps\n", "3"));
  CHECK(fails_on_line("mode = everything\n", "1"));
}

TEST_CASE("config: finalize validates and copies the step count into the schedules") {
  TrainConfig c = tiny("steps = 40\n");
  c.finalize();
  CHECK(c.mask.total_steps == 40);
  CHECK(c.ema.total_steps == 40);
  CHECK_THROWS_AS(tiny("model.heads = 3\n").finalize(), std::invalid_argument);
  CHECK_THROWS_AS(tiny("loss.tau_teacher = 0\n").finalize(), std::invalid_argument);
}

TEST_CASE("mode gating of loss terms") {
  const ActiveTerms b = active_terms(TrainMode::baseline);
  CHECK((b.lm && !b.mim && !b.ga && !b.cga));
  const ActiveTerms m = active_terms(TrainMode::mim_only);
  CHECK((m.lm && m.mim && !m.ga && !m.cga));
  const ActiveTerms g = active_terms(TrainMode::mim_ga);
  CHECK((g.lm && g.mim && g.ga && !g.cga));
  const ActiveTerms l = active_terms(TrainMode::laver);
  CHECK((l.lm && l.mim && !l.ga && l.cga));
  for (auto mode : {TrainMode::baseline, TrainMode::mim_only, TrainMode::mim_ga, TrainMode::laver})
    CHECK(train_mode_from_string(to_string(mode)) == mode);
}

TEST_CASE("train_step: inactive terms stay exactly zero; baseline has no teacher") {
  TrainState base = init_state(tiny("mode = baseline\n"));
  CHECK_FALSE(base.teacher.has_value());
  Rng rng(3);
  const auto batch = generate(rng, base.config.synth(), 2);
  const StepRecord r = train_step(base, batch);
  CHECK(r.mim == 0.0);
  CHECK(r.ga == 0.0);
  CHECK(r.cga == 0.0);
  CHECK(r.total == r.lm);

  TrainState mim = init_state(tiny("mode = mim_only\nmask.schedule = constant\n"));
  REQUIRE(mim.teacher.has_value());
  const StepRecord rm = train_step(mim, batch);
  CHECK(rm.ga == 0.0);
  CHECK(rm.cga == 0.0);
  CHECK(rm.masked_tokens > 0);
}

TEST_CASE("train_step: zero learning rate leaves the student unchanged") {
  TrainState s = init_state(tiny("mode = laver\noptim.lr = 0\n"));
  const ModelParams before = s.params;
  Rng rng(4);
  for (int i = 0; i < 3; ++i) train_step(s, generate(rng, s.config.synth(), 2));
  CHECK(params_equal(before, s.params));
  CHECK(s.step == 3);
}

TEST_CASE("lr schedule: warmup then cosine to zero") {
  OptimizerConfig o;
  o.lr = 1.0;
  o.warmup_ratio = 0.1;
  CHECK(lr_at(o, 0, 100) == doctest::Approx(0.1));
  CHECK(lr_at(o, 9, 100) == doctest::Approx(1.0));
  CHECK(lr_at(o, 99, 100) < 0.01);
  CHECK(lr_at(o, 99, 100) >= 0.0);
}

TEST_CASE("run_training: metric lines, diagnostics placement and files") {
  const fs::path out = scratch("run");
  std::size_t echoed = 0;
  const TrainSummary s = run_training(tiny(), out, [&](const std::string&) { ++echoed; });
  CHECK(s.steps == 10);
  const auto rows = load_metrics(out / "metrics.jsonl");
  REQUIRE(rows.size() == 3);  // steps 4, 8, 10
  CHECK(echoed == 3);
  CHECK(rows[0].step == 4);
  CHECK(rows[1].step == 8);
  CHECK(rows[2].step == 10);
  CHECK_FALSE(rows[0].values.contains("diagnostics.probe_accuracy"));
  CHECK(rows[1].values.contains("diagnostics.probe_accuracy"));
  CHECK(rows[2].values.contains("diagnostics.cosine.1"));
  CHECK_FALSE(rows[2].values.contains("diagnostics.cosine.2"));
  for (const char* key : {"cga", "ema_decay", "ga", "lm", "lr", "mask_ratio", "mim", "teacher_step", "total", "train_accuracy"})
    CHECK(rows[0].values.contains(key));
  CHECK(fs::exists(out / "checkpoint.lvck"));
  const auto summary = nlohmann::json::parse(slurp(out / "summary.json"));
  CHECK(summary["steps"] == 10);
  CHECK(summary["mode"] == "laver");
  fs::remove_all(out);
}

TEST_CASE("run_training: zero steps writes the initial parameters") {
  const fs::path out = scratch("zero");
  const TrainConfig cfg = tiny("steps = 0\n");
  run_training(cfg, out);
  const Checkpoint ck = load_checkpoint(out / "checkpoint.lvck");
  const TrainState fresh = init_state(cfg);
  CHECK(params_equal(restore_params(ck, fresh.config.model), fresh.params));
  CHECK(slurp(out / "metrics.jsonl").empty());
  fs::remove_all(out);
}

TEST_CASE("run_training: identical config and seed give byte-identical outputs") {
  const fs::path a = scratch("det_a"), b = scratch("det_b"), c = scratch("det_c");
  run_training(tiny(), a);
  run_training(tiny(), b);
  run_training(tiny("seed = 2\n"), c);
  CHECK(slurp(a / "metrics.jsonl") == slurp(b / "metrics.jsonl"));
  CHECK(slurp(a / "checkpoint.lvck") == slurp(b / "checkpoint.lvck"));
  CHECK(slurp(a / "metrics.jsonl") != slurp(c / "metrics.jsonl"));
  for (const auto& d : {a, b, c}) fs::remove_all(d);
}

TEST_CASE("checkpoint: round trip with teacher, rejection of mismatched shapes") {
  const TrainState s = init_state(tiny());
  const fs::path dir = scratch("ckpt");
  fs::create_directories(dir);
  save_checkpoint(dir / "c.lvck", make_checkpoint(to_text(s.config), s.params, &s.teacher->params));
  const Checkpoint ck = load_checkpoint(dir / "c.lvck");
  CHECK(ck.config_text == to_text(s.config));
  CHECK(params_equal(restore_params(ck, s.config.model), s.params));
  CHECK(params_equal(restore_params(ck, s.config.model, kTeacherPrefix), s.teacher->params));
  ModelConfig wider = s.config.model;
  wider.d_model = 32;
  CHECK_THROWS_AS(restore_params(ck, wider), std::runtime_error);
  std::ofstream(dir / "junk.lvck") << "LVCX";
  CHECK_THROWS(load_checkpoint(dir / "junk.lvck"));
  fs::remove_all(dir);
}

TEST_CASE("compare: identical logs, missing metrics and misaligned steps") {
  const std::string a =
      "{\"step\":1,\"lm\":2.0,\"mode\":\"laver\",\"diagnostics\":{\"cosine\":[0.5,0.7]}}\n"
      "{\"step\":2,\"lm\":1.5,\"mode\":\"laver\",\"diagnostics\":{\"cosine\":[0.4,0.6]}}\n";
  const auto ra = parse_metrics(a);
  REQUIRE(ra.size() == 2);
  CHECK(ra[0].values.at("diagnostics.cosine.1") == 0.7);
  CHECK_FALSE(ra[0].values.contains("mode"));

  const CompareReport same = compare_metrics(ra, ra);
  CHECK(same.max_abs_delta == 0.0);
  CHECK(same.steps == std::vector<std::int64_t>{1, 2});
  CHECK(render_table(same).find("final step 2") != std::string::npos);

  const auto rb = parse_metrics(
      "{\"step\":1,\"lm\":2.5,\"diagnostics\":{\"cosine\":[0.5,0.7]}}\n"
      "{\"step\":2,\"lm\":1.0,\"diagnostics\":{\"cosine\":[0.4,0.9]}}\n");
  const CompareReport d = compare_metrics(ra, rb);
  CHECK(d.max_abs_delta == doctest::Approx(0.5));
  bool found = false;
  for (const auto& f : d.final_values)
    if (f.metric == "diagnostics.cosine.1") {
      CHECK(f.delta == doctest::Approx(0.3));
      found = true;
    }
  CHECK(found);

  CHECK_THROWS_AS(compare_metrics(ra, parse_metrics("{\"step\":1,\"lm\":2.0}\n")), std::invalid_argument);
  CHECK_THROWS_AS(compare_metrics(ra, parse_metrics("{\"step\":1,\"lm\":2,\"diagnostics\":{\"cosine\":[0.5,0.7]}}\n"
                                                    "{\"step\":3,\"lm\":1,\"diagnostics\":{\"cosine\":[0.4,0.6]}}\n")),
                  std::invalid_argument);
  CHECK_THROWS_AS(compare_metrics(ra, parse_metrics("{\"step\":1,\"lm\":2,\"diagnostics\":{\"cosine\":[0.5,0.7]}}\n"
                                                    "{\"step\":2,\"diagnostics\":{\"cosine\":[0.4,0.6]}}\n")),
                  std::invalid_argument);
  CHECK_THROWS_AS(compare_metrics({}, {}), std::invalid_argument);
  CHECK_THROWS(parse_metrics("{\"lm\":1}\n"));
}

TEST_CASE("grad_check passes at the default tolerances") {
  const GradCheckReport r = grad_check(GradCheckConfig{});
  CHECK(r.zero_perturbation_identical);
  CHECK(r.entries.size() == 8);
  for (const auto& e : r.entries) {
    INFO(e.loss, " ", e.scope, " ", e.max_rel_error);
    CHECK(e.pass);
    CHECK(e.checked > 0);
  }
  CHECK(r.pass());
}

TEST_CASE("diagnose: checkpoint and feature reports") {
  const fs::path run = scratch("diag_run"), out = scratch("diag_out");
  run_training(tiny(), run);
  DiagnoseOptions opt;
  opt.probe_count = 3;
  const auto report = nlohmann::json::parse(diagnose_checkpoint(run / "checkpoint.lvck", opt, out));
  CHECK(report["cosine"].size() == 2);
  CHECK(report["attention"].size() == 1);
  CHECK(report.contains("student_vs_teacher"));
  for (const char* f : {"report.json", "pca_input.ppm", "pca_final.ppm", "gram_final.pgm"}) CHECK(fs::exists(out / f));

  Rng rng(8);
  fs::create_directories(run);
  save_lvtd(run / "a.lvtd", sample_gaussian(rng, {6, 5}, 1.0));
  save_lvtd(run / "b.lvtd", sample_gaussian(rng, {6, 4}, 1.0));
  const fs::path fout = scratch("diag_feat");
  const auto feat = nlohmann::json::parse(diagnose_features(run / "a.lvtd", run / "b.lvtd", 2, 3, opt, fout));
  CHECK(feat.contains("mean_cosine"));
  CHECK(feat["alignment"]["k"] == 5);
  CHECK(fs::exists(fout / "pca.ppm"));
  CHECK(fs::exists(fout / "gram.pgm"));
  for (const auto& d : {run, out, fout}) fs::remove_all(d);
}
