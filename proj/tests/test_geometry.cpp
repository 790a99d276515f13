#include "doctest.h"

#include <algorithm>
#include <random>

#include "icseg/geometry.hpp"
#include "oracles.hpp"

using namespace icseg;

namespace {

int count_set(const ProbMap& m) { return static_cast<int>((m > 0.5f).count()); }

ClickSet one_click(int r, int c, Polarity p = Polarity::positive) {
  ClickSet s;
  push_click(s, r, c, p);
  return s;
}

BinaryMask random_mask(int h, int w, double density, std::mt19937_64& rng) {
  std::bernoulli_distribution on(density);
  BinaryMask m(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) m(r, c) = on(rng);
  return m;
}

}  // namespace

TEST_CASE("disk encoding matches lattice-point counts") {
  const auto [pos, neg] = encode_clicks(one_click(10, 10), {32, 32}, 5);
  CHECK(count_set(pos) == oracle::lattice_points(5, false));
  CHECK(count_set(pos) == 81);
  CHECK(count_set(neg) == 0);

  const auto [corner, unused] = encode_clicks(one_click(0, 0), {32, 32}, 5);
  CHECK(count_set(corner) == oracle::lattice_points(5, true));
  CHECK(count_set(corner) == 26);

  for (int r = 1; r <= 8; ++r) {
    const auto [p, n] = encode_clicks(one_click(15, 16), {32, 32}, r);
    CHECK(count_set(p) == oracle::lattice_points(r, false));
  }
}

TEST_CASE("empty click set encodes to zeros") {
  const auto [pos, neg] = encode_clicks({}, {20, 20}, 5);
  CHECK((pos == 0.0f).all());
  CHECK((neg == 0.0f).all());
}

TEST_CASE("out-of-bounds click is rejected and named") {
  ClickSet s;
  push_click(s, 3, 40, Polarity::negative);
  try {
    encode_clicks(s, {32, 32}, 5);
    FAIL("expected rejection");
  } catch (const std::invalid_argument& e) {
    const std::string msg = e.what();
    CHECK(msg.find("40") != std::string::npos);
  }
  CHECK_THROWS_AS(encode_clicks(one_click(1, 1), {32, 32}, 0), std::invalid_argument);
}

TEST_CASE("encoding is order independent, monotone and exact") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> coord(0, 39);
  for (int trial = 0; trial < 20; ++trial) {
    ClickSet clicks;
    for (int i = 0; i < 6; ++i)
      push_click(clicks, coord(rng), coord(rng), i % 3 == 2 ? Polarity::negative : Polarity::positive);
    ClickSet shuffled = clicks;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    const auto a = encode_clicks(clicks, {40, 40}, 4);
    const auto b = encode_clicks(shuffled, {40, 40}, 4);
    CHECK((a.first == b.first).all());
    CHECK((a.second == b.second).all());

    ClickSet prefix(clicks.begin(), clicks.begin() + 3);
    const auto p = encode_clicks(prefix, {40, 40}, 4);
    CHECK(((p.first > 0.5f) <= (a.first > 0.5f)).all());

    for (int r = 0; r < 40; ++r)
      for (int c = 0; c < 40; ++c) {
        bool near = false;
        for (const auto& k : clicks)
          if (k.positive() && (k.row - r) * (k.row - r) + (k.col - c) * (k.col - c) <= 16) near = true;
        CHECK((a.first(r, c) > 0.5f) == near);
      }
  }
}

TEST_CASE("compose_guidance keeps channel order and validates shapes") {
  const auto [pos, neg] = encode_clicks(one_click(5, 5), {16, 16}, 3);
  ProbMap prev = ProbMap::Constant(16, 16, 0.25f);
  const GuidanceStack g = compose_guidance(pos, neg, prev);
  const Matrix<float> m = g.as_matrix();
  CHECK(m.rows() == 256);
  CHECK(m.cols() == 3);
  CHECK(m(5 * 16 + 5, 0) == 1.0f);
  CHECK(m.col(1).sum() == 0.0f);
  CHECK((m.col(2).array() == 0.25f).all());
  CHECK_THROWS_AS(compose_guidance(pos, neg, ProbMap::Zero(15, 16)), std::invalid_argument);
}

TEST_CASE("iou conventions") {
  BinaryMask a = BinaryMask::Constant(4, 4, false);
  BinaryMask b = BinaryMask::Constant(4, 4, false);
  CHECK(iou(a, b) == 1.0);
  a.topRows(2).setConstant(true);
  b.leftCols(2).setConstant(true);
  // brute count: intersection 4, union 12
  int inter = 0, uni = 0;
  for (int r = 0; r < 4; ++r)
    for (int c = 0; c < 4; ++c) {
      inter += a(r, c) && b(r, c);
      uni += a(r, c) || b(r, c);
    }
  CHECK(iou(a, b) == doctest::Approx(static_cast<double>(inter) / uni));
  CHECK(iou(a, b) == doctest::Approx(1.0 / 3.0));
  CHECK(iou(a, a) == 1.0);
  CHECK(iou(a, BinaryMask::Constant(4, 4, false)) == 0.0);
  CHECK(iou(a, b) == iou(b, a));
  BinaryMask c = BinaryMask::Constant(4, 4, false);
  c.bottomRows(2).setConstant(true);
  CHECK(iou(a, c) == 0.0);
  CHECK_THROWS_AS(iou(a, BinaryMask::Constant(3, 4, false)), std::invalid_argument);
}

TEST_CASE("binarize is inclusive and idempotent") {
  CHECK(binarize(ProbMap::Constant(3, 3, 0.7f)).all());
  CHECK(binarize(ProbMap::Constant(3, 3, 0.5f)).all());
  CHECK(!binarize(ProbMap::Constant(3, 3, 0.0f)).any());
  CHECK_THROWS_AS(binarize(ProbMap::Constant(3, 3, 0.5f), 1.0f), std::invalid_argument);
  std::mt19937_64 rng(3);
  const BinaryMask m = random_mask(9, 11, 0.4, rng);
  CHECK((binarize(to_prob(binarize(to_prob(m)))) == m).all());
}

TEST_CASE("image invariants") {
  CHECK_THROWS_AS(Image(15, 20).validate(), std::invalid_argument);
  Image im(16, 16);
  CHECK_NOTHROW(im.validate());
  im(3, 4, 1) = 1.5f;
  CHECK_THROWS_AS(im.validate(), std::invalid_argument);
}

TEST_CASE("bilinear resize preserves constants and matches half-pixel taps") {
  const ProbMap c = ProbMap::Constant(7, 9, 0.3f);
  const ProbMap r = resize_bilinear(c, 20, 13);
  CHECK(r.rows() == 20);
  CHECK(r.cols() == 13);
  CHECK((r - 0.3f).abs().maxCoeff() < 1e-6f);

  // 2x upsampling of [0, 1] along a row: centers at 0.25, 0.75 etc.
  ProbMap row(1, 2);
  row << 0.0f, 1.0f;
  const ProbMap up = resize_bilinear(row, 1, 4);
  CHECK(up(0, 0) == doctest::Approx(0.0));
  CHECK(up(0, 1) == doctest::Approx(0.25));
  CHECK(up(0, 2) == doctest::Approx(0.75));
  CHECK(up(0, 3) == doctest::Approx(1.0));
}

TEST_CASE("tight bbox and crop") {
  BinaryMask m = BinaryMask::Constant(10, 12, false);
  CHECK(tight_bbox(m).empty());
  m(2, 3) = true;
  m(6, 8) = true;
  const BoundingBox b = tight_bbox(m);
  CHECK(b == BoundingBox{2, 3, 7, 9});
  Image im(16, 16);
  im(5, 6, 2) = 0.5f;
  const Image cr = crop(im, {5, 6, 9, 10});
  CHECK(cr.height() == 4);
  CHECK(cr(0, 0, 2) == 0.5f);
}
