#include "doctest.h"

#include <random>

#include "icseg/augment.hpp"
#include "icseg/dataset.hpp"
#include "icseg/geometry.hpp"

using namespace icseg;

TEST_CASE("disabled augmentation is the identity") {
  const SynthImage s = synth_image(1);
  ClickSet clicks;
  push_click(clicks, 3, 4, Polarity::positive);
  const auto a = augment(s.image, s.masks, clicks, AugmentConfig::none(), 99);
  CHECK(a.image.pixels() == s.image.pixels());
  for (std::size_t i = 0; i < s.masks.size(); ++i) CHECK((a.masks[i] == s.masks[i]).all());
  CHECK(a.clicks == clicks);
}

TEST_CASE("horizontal flip mirrors clicks and masks") {
  GeometricTransform t;
  t.height = 10;
  t.width = 12;
  t.flip = true;
  for (int c = 0; c < 12; ++c) {
    const auto m = apply_transform(t, Click{4, c, Polarity::negative, 0});
    REQUIRE(m.has_value());
    CHECK(m->row == 4);
    CHECK(m->col == 12 - 1 - c);
    CHECK(m->polarity == Polarity::negative);
  }
  BinaryMask mask = empty_mask({10, 12});
  mask(2, 1) = true;
  CHECK(apply_transform(t, mask)(2, 10));
  CHECK(apply_transform(t, mask).count() == 1);
}

TEST_CASE("forward and inverse maps are mutual inverses") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 64);
  for (int k = 0; k < 50; ++k) {
    const auto t = sample_transform(64, 64, AugmentConfig{}, rng());
    const double r = u(rng), c = u(rng);
    double fr, fc, br, bc;
    t.forward(r, c, &fr, &fc);
    t.inverse(fr, fc, &br, &bc);
    CHECK(br == doctest::Approx(r).epsilon(1e-9));
    CHECK(bc == doctest::Approx(c).epsilon(1e-9));
  }
}

TEST_CASE("transforms are consistent across image, masks and clicks") {
  std::mt19937_64 rng(2);
  AugmentConfig cfg;
  cfg.min_scale = cfg.max_scale = 1.25;  // the zoomed-in extreme
  for (int k = 0; k < 30; ++k) {
    const SynthImage s = synth_image(rng());
    const BinaryMask gt = s.masks[0];
    ClickSet clicks;
    for (int i = 0; i < 10; ++i)
      push_click(clicks, static_cast<int>(rng() % 64), static_cast<int>(rng() % 64),
                 i % 2 ? Polarity::negative : Polarity::positive);
    const std::uint64_t seed = rng();
    const auto a = augment(s.image, s.masks, clicks, cfg, seed);
    // the mask carried with the sample equals the mask transformed on its own
    CHECK(iou(apply_transform(a.transform, gt), a.masks[0]) == 1.0);
    CHECK(a.clicks.size() + a.dropped_clicks == clicks.size());
    // surviving clicks keep polarity and in/out-of-mask status
    std::size_t j = 0;
    for (const auto& c : clicks) {
      const auto m = apply_transform(a.transform, c);
      if (!m) continue;
      REQUIRE(j < a.clicks.size());
      CHECK(a.clicks[j].polarity == c.polarity);
      CHECK(a.masks[0](a.clicks[j].row, a.clicks[j].col) == gt(c.row, c.col));
      ++j;
    }
    CHECK_NOTHROW(validate_clicks(a.clicks, 64, 64));
  }
}

TEST_CASE("sampled transforms respect their ranges and are deterministic") {
  AugmentConfig cfg;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    const auto t = sample_transform(64, 64, cfg, seed);
    CHECK(std::abs(t.angle) <= 15.0 * 3.14159265358979 / 180.0 + 1e-12);
    CHECK(t.scale >= 0.75);
    CHECK(t.scale <= 1.25);
    CHECK(std::abs(t.shift_row) <= std::abs(t.scale - 1) * 32 + 1e-12);
    const auto t2 = sample_transform(64, 64, cfg, seed);
    CHECK(t2.angle == t.angle);
    CHECK(t2.shift_col == t.shift_col);
  }
}
