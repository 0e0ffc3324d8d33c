#include <doctest.h>

#include <stdexcept>

#include "laver/ema.hpp"
#include "laver/rng.hpp"

using namespace laver;

namespace {

ModelConfig small() {
  ModelConfig c;
  c.n_layers = 1;
  c.d_model = 16;
  c.n_heads = 1;
  c.vocab_size = 8;
  c.visual_logit_dim = 4;
  c.vision_head_hidden = 8;
  c.patch_size = 2;
  c.grid_rows = 1;
  c.grid_cols = 2;
  return c;
}

ModelParams filled(float v) {
  ModelParams p = ModelParams::zeros(small());
  p.visit([&](const std::string&, ParamGroup, Tensor& t) { t.fill(v); });
  return p;
}

}  // namespace

TEST_CASE("decay_at: cosine schedule endpoints and midpoint") {
  const EmaConfig cfg{0.95, EmaSchedule::cosine_to_one, 100, 2000};
  CHECK(decay_at(cfg, 0) == 0.95);
  CHECK(decay_at(cfg, 2000) == 1.0);
  CHECK(decay_at(cfg, 1000) == doctest::Approx(0.975).epsilon(1e-12));
  double prev = 0.0;
  for (int s = 0; s <= 2000; s += 50) {
    CHECK(decay_at(cfg, s) >= prev);
    prev = decay_at(cfg, s);
  }
  CHECK_THROWS_AS(decay_at(cfg, 2001), std::invalid_argument);
  const EmaConfig flat{0.9, EmaSchedule::constant, 1, 10};
  CHECK(decay_at(flat, 7) == 0.9);
}

TEST_CASE("ema config validation and schedule names") {
  CHECK_THROWS_AS((EmaConfig{1.5, EmaSchedule::constant, 1, 10}.validate()), std::invalid_argument);
  CHECK_THROWS_AS((EmaConfig{0.9, EmaSchedule::constant, 0, 10}.validate()), std::invalid_argument);
  CHECK(ema_schedule_from_string(to_string(EmaSchedule::constant)) == EmaSchedule::constant);
  CHECK(ema_schedule_from_string(to_string(EmaSchedule::cosine_to_one)) == EmaSchedule::cosine_to_one);
  CHECK_THROWS_AS(ema_schedule_from_string("linear"), std::invalid_argument);
}

TEST_CASE("ema blend: scalar case and fixed points") {
  CHECK(ema_blend(1.0, 0.0, 0.95) == doctest::Approx(0.95));
  CHECK(ema_blend(0.0, 1.0, 0.95) == doctest::Approx(0.05));
  CHECK(ema_blend(0.3, 0.7, 1.0) == 0.3);
  CHECK(ema_blend(0.3, 0.7, 0.0) == 0.7);
}

TEST_CASE("maybe_update: lambda 1 keeps the teacher, lambda 0 copies the student") {
  const ModelParams student = filled(1.0f);
  TeacherState keep = init_teacher(filled(0.0f));
  CHECK(maybe_update(keep, student, EmaConfig{1.0, EmaSchedule::constant, 1, 10}, 1));
  CHECK(keep.params.lm_w == filled(0.0f).lm_w);
  CHECK(keep.params.blocks[0].w_qkv == filled(0.0f).blocks[0].w_qkv);

  TeacherState copy = init_teacher(filled(0.0f));
  CHECK(maybe_update(copy, student, EmaConfig{0.0, EmaSchedule::constant, 1, 10}, 1));
  bool all_equal = true;
  copy.params.visit([&](const std::string&, ParamGroup, const Tensor& t) {
    for (float v : t.values()) all_equal &= v == 1.0f;
  });
  CHECK(all_equal);
}

TEST_CASE("maybe_update: 0.95 blend everywhere except the connector, which is copied") {
  TeacherState t = init_teacher(filled(1.0f));
  const ModelParams student = filled(0.0f);
  REQUIRE(maybe_update(t, student, EmaConfig{0.95, EmaSchedule::constant, 1, 10}, 1));
  t.params.visit([&](const std::string& name, ParamGroup group, const Tensor& p) {
    const float expected = group == ParamGroup::connector ? 0.0f : 0.95f;
    for (float v : p.values()) REQUIRE_MESSAGE(v == doctest::Approx(expected), name);
  });
}

TEST_CASE("maybe_update: fires only every update_every steps") {
  TeacherState t = init_teacher(filled(1.0f));
  const ModelParams student = filled(0.0f);
  const EmaConfig cfg{0.5, EmaSchedule::constant, 100, 1000};
  int fired = 0;
  for (int step = 1; step <= 1000; ++step) fired += maybe_update(t, student, cfg, step) ? 1 : 0;
  CHECK(fired == 10);
  CHECK(t.last_update_step == 1000);
  CHECK(t.params.lm_w[0] == doctest::Approx(1.0 / 1024.0));
  CHECK_THROWS_AS(maybe_update(t, student, cfg, 999), std::invalid_argument);
  ModelConfig other = small();
  other.n_layers = 2;
  CHECK_THROWS_AS(maybe_update(t, ModelParams::zeros(other), cfg, 2000), std::logic_error);
}
