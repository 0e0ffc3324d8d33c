#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "laver/masking.hpp"
#include "laver/rng.hpp"

using namespace laver;

TEST_CASE("ratio_at: cosine endpoints and midpoint") {
  const MaskSchedule s{ScheduleKind::cosine, 0.05, 2000};
  CHECK(ratio_at(s, 0) == 0.0);
  CHECK(ratio_at(s, 2000) == 0.05);
  CHECK(ratio_at(s, 1000) == doctest::Approx(0.025).epsilon(1e-12));
  CHECK_THROWS_AS(ratio_at(s, -1), std::invalid_argument);
  CHECK_THROWS_AS(ratio_at(s, 2001), std::invalid_argument);
}

TEST_CASE("ratio_at: constant is flat, cosine is monotone") {
  const MaskSchedule c{ScheduleKind::constant, 0.3, 100};
  for (int t = 0; t <= 100; ++t) CHECK(ratio_at(c, t) == 0.3);
  const MaskSchedule s{ScheduleKind::cosine, 0.7, 97};
  double prev = -1.0;
  for (int t = 0; t <= 97; ++t) {
    const double r = ratio_at(s, t);
    CHECK(r >= prev);
    CHECK(r <= 0.7);
    prev = r;
  }
}

TEST_CASE("schedule kind names round-trip") {
  for (auto k : {ScheduleKind::constant, ScheduleKind::cosine}) CHECK(schedule_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(schedule_kind_from_string("linear"), std::invalid_argument);
}

TEST_CASE("draw_mask: degenerate ratios and rejection") {
  Rng rng(1);
  const MaskPlan none = draw_mask(rng, 50, 0.0);
  CHECK(none.masked_count() == 0);
  const MaskPlan all = draw_mask(rng, 50, 1.0, 3);
  CHECK(all.masked_count() == 50);
  CHECK(all.image_id == 3);
  CHECK(all.ratio_used == 1.0);
  CHECK_THROWS_AS(draw_mask(rng, 0, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(draw_mask(rng, 4, 1.5), std::invalid_argument);
  CHECK_THROWS_AS(draw_mask(rng, 4, -0.1), std::invalid_argument);
}

TEST_CASE("draw_mask: binomial concentration at the default ratio") {
  // 729 tokens x 1000 draws, p = 0.05: sd of the fraction is about 2.6e-4.
  Rng rng(2);
  std::size_t masked = 0;
  for (int d = 0; d < 1000; ++d) masked += draw_mask(rng, 729, 0.05).masked_count();
  const double frac = double(masked) / (729.0 * 1000.0);
  CHECK(frac >= 0.045);
  CHECK(frac <= 0.055);
}

TEST_CASE("draw_mask: reproducible bit for bit") {
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) CHECK(draw_mask(a, 64, 0.3).mask == draw_mask(b, 64, 0.3).mask);
}

TEST_CASE("apply_mask: row replacement only") {
  Rng rng(3);
  const Tensor v = sample_gaussian(rng, {8, 5}, 1.0);
  const Tensor e = sample_gaussian(rng, {5}, 1.0);

  MaskPlan plan;
  plan.mask.assign(8, false);
  CHECK(apply_mask(v, plan, e) == v);

  plan.mask[3] = true;
  const Tensor one = apply_mask(v, plan, e);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(one(r, c) == (r == 3 ? e[c] : v(r, c)));

  plan.mask.assign(8, true);
  const Tensor all = apply_mask(v, plan, e);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 5; ++c) CHECK(all(r, c) == e[c]);

  plan.mask.assign(7, true);
  CHECK_THROWS_AS(apply_mask(v, plan, e), std::invalid_argument);
  plan.mask.assign(8, true);
  CHECK_THROWS_AS(apply_mask(v, plan, Tensor({4})), std::invalid_argument);
}

TEST_CASE("apply_mask: output row depends only on its own input row") {
  Rng rng(4);
  const Tensor v = sample_gaussian(rng, {6, 4}, 1.0);
  const Tensor e = sample_gaussian(rng, {4}, 1.0);
  const MaskPlan plan = draw_mask(rng, 6, 0.5);
  const Tensor base = apply_mask(v, plan, e);
  for (std::size_t changed = 0; changed < 6; ++changed) {
    Tensor w = v;
    for (std::size_t c = 0; c < 4; ++c) w(changed, c) += 1.0f;
    const Tensor out = apply_mask(w, plan, e);
    for (std::size_t r = 0; r < 6; ++r) {
      if (r == changed) continue;
      for (std::size_t c = 0; c < 4; ++c) CHECK(out(r, c) == base(r, c));
    }
  }
}
