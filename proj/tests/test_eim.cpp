#include "doctest.h"

#include <random>

#include "gradcheck.hpp"
#include "icseg/exemplar_module.hpp"

using namespace icseg;
using gradcheck::MatD;
using gradcheck::TapeD;
using gradcheck::VarD;

namespace {

BinaryMask square(int size, int r0, int c0, int side) {
  BinaryMask m = empty_mask({size, size});
  m.block(r0, c0, side, side).setConstant(true);
  return m;
}

Image noise_image(int h, int w, std::mt19937_64& rng) {
  Image img(h, w);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = u(rng);
  return img;
}

}  // namespace

TEST_CASE("exemplar crop boxes") {
  std::mt19937_64 rng(1);
  const Image img = noise_image(64, 64, rng);
  const auto crops = crop_exemplar(img, square(64, 22, 22, 20));
  REQUIRE(crops.size() == 3);
  CHECK(crops[1].scale == 1.0);
  CHECK(crops[1].source_bbox == BoundingBox{22, 22, 42, 42});
  CHECK(crops[2].source_bbox == BoundingBox{20, 20, 44, 44});
  CHECK(crops[0].source_bbox == BoundingBox{24, 24, 40, 40});
  CHECK(crops[2].crop.height() == 24);
  CHECK(crops[2].crop.pixels().row(0) == img.pixels().row(20 * 64 + 20));

  // touching the top-left corner: clipped at the edge
  const auto edge = crop_exemplar(img, square(64, 0, 0, 20), {1.2});
  CHECK(edge[0].source_bbox == BoundingBox{0, 0, 22, 22});

  CHECK_THROWS_AS(crop_exemplar(img, empty_mask({64, 64})), std::invalid_argument);
  CHECK_THROWS_AS(crop_exemplar(img, empty_mask({32, 64})), std::invalid_argument);
}

TEST_CASE("feature encoder stride, zero input, determinism") {
  std::mt19937_64 rng(2);
  ParameterStore<float> store;
  const auto enc = FeatureEncoder<float>::make(store, "e", {16, 32, 64}, rng);
  CHECK(enc.stride() == 8);
  CHECK(enc.channels() == 64);
  Tape<float> t(false);
  int h = 0, w = 0;
  const Image img = noise_image(64, 64, rng);
  const Matrix<float> f = enc(t, t.constant(img.pixels()), 64, 64, &h, &w).value();
  CHECK(h == 8);
  CHECK(w == 8);
  CHECK(f.rows() == 64);
  CHECK(f.cols() == 64);
  CHECK(f == enc(t, t.constant(img.pixels()), 64, 64, &h, &w).value());
  // biases start at zero
  CHECK(enc(t, t.constant(Matrix<float>::Zero(64 * 64, 3)), 64, 64, &h, &w).value().isZero());
  CHECK_THROWS_AS(enc(t, t.constant(Matrix<float>::Zero(4 * 4, 3)), 4, 4, &h, &w), std::invalid_argument);
  CHECK_THROWS_AS(enc(t, t.constant(Matrix<float>::Zero(60 * 60, 3)), 60, 60, &h, &w), std::invalid_argument);
}

TEST_CASE("projection contracts") {
  std::mt19937_64 rng(3);
  ParameterStore<double> store;
  auto proj = Linear<double>::make(store, "p", 8, 8, Init::trunc_normal, rng);
  proj.weight->value.setIdentity();
  TapeD t(false);
  const MatD x = gradcheck::random(64, 8, rng);
  CHECK(proj(t, t.constant(x)).value() == x);
  CHECK(proj(t, t.constant(MatD::Zero(64, 8))).value().isZero());
  auto wide = Linear<double>::make(store, "q", 64, 32, Init::trunc_normal, rng);
  CHECK(wide(t, t.constant(MatD::Zero(64, 64))).value().cols() == 32);
}

TEST_CASE("correlation matches the double-loop oracle") {
  std::mt19937_64 rng(4);
  TapeD t(false);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 16 + trial, k = 1 + trial % 5, c = 4 + trial % 3;
    const MatD fo = gradcheck::random(n, c, rng);
    const MatD fe = gradcheck::random(k, c, rng);
    const MatD r = correlate(t.constant(fo), t.constant(fe)).value();
    REQUIRE(r.rows() == n);
    REQUIRE(r.cols() == k);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < k; ++j) {
        double s = 0;
        for (int ch = 0; ch < c; ++ch) s += fo(i, ch) * fe(j, ch);
        CHECK(std::abs(r(i, j) - s) < 1e-5);
      }
  }
  CHECK(correlate(t.constant(gradcheck::random(9, 4, rng)), t.constant(MatD::Zero(3, 4))).value().isZero());
  CHECK_THROWS_AS(correlate(t.constant(MatD::Zero(9, 4)), t.constant(MatD::Zero(3, 5))), std::invalid_argument);
}

TEST_CASE("exemplar window copied from the image peaks where it was taken") {
  // Matched-filter score of a 2x2 exemplar at image position (y, x), written
  // as a direct sliding loop over the image features.
  std::mt19937_64 rng(5);
  const int h = 10, w = 10, c = 32;
  TapeD t(false);
  auto window = [&](const MatD& fo, int r0, int c0) {
    MatD fe(4, c);
    for (int k = 0; k < 4; ++k) fe.row(k) = fo.row((r0 + k / 2) * w + c0 + k % 2);
    return fe;
  };
  auto peak_from_response = [&](const MatD& r) {
    int best = -1;
    double best_score = -1e300;
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x + 1 < w; ++x) {
        double s = 0;
        for (int k = 0; k < 4; ++k) s += r((y + k / 2) * w + x + k % 2, k);
        if (s > best_score) best_score = s, best = y * w + x;
      }
    return best;
  };
  auto peak_oracle = [&](const MatD& fo, const MatD& fe) {
    int best = -1;
    double best_score = -1e300;
    for (int y = 0; y + 1 < h; ++y)
      for (int x = 0; x + 1 < w; ++x) {
        double s = 0;
        for (int k = 0; k < 4; ++k)
          for (int ch = 0; ch < c; ++ch) s += fo((y + k / 2) * w + x + k % 2, ch) * fe(k, ch);
        if (s > best_score) best_score = s, best = y * w + x;
      }
    return best;
  };
  std::uniform_int_distribution<int> u(1, 6);
  for (int trial = 0; trial < 10; ++trial) {
    const MatD fo = gradcheck::random(h * w, c, rng);
    const int rs = u(rng), cs = u(rng);
    const MatD fe = window(fo, rs, cs);
    const int got = peak_from_response(correlate(t.constant(fo), t.constant(fe)).value());
    CHECK(got == peak_oracle(fo, fe));
    CHECK(got == rs * w + cs);
    const MatD fe_shifted = window(fo, rs + 1, cs + 1);
    CHECK(peak_from_response(correlate(t.constant(fo), t.constant(fe_shifted)).value()) == got + w + 1);
  }
}

TEST_CASE("response normalisation") {
  TapeD t(false);
  const MatD flat = MatD::Constant(5, 4, 3.7);
  const MatD n = normalize_response(t.constant(flat), 2, 2, 8).value();
  CHECK((n.array() - 0.25).abs().maxCoeff() < 1e-12);

  // unit sizes: plain softmax
  MatD raw(1, 3);
  raw << 0.0, 1.0, 2.0;
  const MatD s = normalize_response(t.constant(raw), 1, 1, 1).value();
  const double z = 1 + std::exp(1.0) + std::exp(2.0);
  CHECK(s(0, 2) == doctest::Approx(std::exp(2.0) / z));

  // scaled by 1/sqrt(He*We*Ce)
  const MatD s2 = normalize_response(t.constant(raw), 2, 2, 4).value();
  const double z2 = 1 + std::exp(0.25) + std::exp(0.5);
  CHECK(s2(0, 1) == doctest::Approx(std::exp(0.25) / z2));

  std::mt19937_64 rng(7);
  const MatD big = gradcheck::random(64, 16, rng, 50.0);
  const MatD kn = normalize_response(t.constant(big), 4, 4, 64).value();
  CHECK((kn.rowwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);
  CHECK((kn.array() > 0).all());
  CHECK((kn.array() < 1).all());
  const MatD sn = normalize_response(t.constant(big), 4, 4, 64, true).value();
  CHECK((sn.colwise().sum().array() - 1.0).abs().maxCoeff() < 1e-6);

  MatD bad = flat;
  bad(0, 0) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(normalize_response(t.constant(bad), 1, 1, 1), std::invalid_argument);
}

TEST_CASE("guided query merge") {
  std::mt19937_64 rng(8);
  ParameterStore<double> store;
  auto m = ExemplarModule<double>::make(store, "eim", {4, 8}, 4, 8, 16, "kernel", "project", rng);
  TapeD t(false);
  const Image img = noise_image(16, 16, rng);
  const Image crop = noise_image(8, 8, rng);
  const MatD queries = gradcheck::random(16, 16, rng);
  const auto out = m(t, t.constant(img.pixels().cast<double>()), 16, 16, {t.constant(crop.pixels().cast<double>())}, 4);
  CHECK(out.ho == 4);
  CHECK(out.he == 2);
  CHECK(out.raw.rows() == 16);
  CHECK(out.raw.cols() == 4);
  CHECK(out.guided.rows() == 16);
  CHECK(out.guided.cols() == 16);
  // zero-initialised merge: recall queries pass through untouched
  CHECK(guided_query_merge(out.guided, t.constant(queries)).value() == queries);

  // a uniform response through resample + projection is the same offset everywhere
  m.merge.weight->value = gradcheck::random(4, 16, rng);
  m.merge.bias->value = gradcheck::random(1, 16, rng);
  const VarD uniform = t.constant(MatD::Constant(9, 4, 0.25));
  const MatD g = m.merge(t, ad::resize_bilinear(uniform, 3, 3, 4, 4)).value();
  const Eigen::RowVectorXd want = 0.25 * m.merge.weight->value.colwise().sum() + m.merge.bias->value.row(0);
  for (int i = 0; i < 16; ++i) CHECK((g.row(i) - want).cwiseAbs().maxCoeff() < 1e-12);

  CHECK_THROWS_AS(guided_query_merge(out.guided, t.constant(MatD::Zero(9, 16))), std::invalid_argument);
  CHECK_THROWS_AS(m(t, t.constant(img.pixels().cast<double>()), 16, 16, {}, 4), std::invalid_argument);
}

TEST_CASE("exemplar module gradients match finite differences") {
  std::mt19937_64 rng(9);
  for (const std::string axis : {"kernel", "spatial"}) {
    ParameterStore<double> store;
    // crop 8 through two stride-2 stages: He = We = 2; projected channels 4
    auto m = ExemplarModule<double>::make(store, "eim", {3, 5}, 4, 8, 6, axis, "project", rng);
    for (std::size_t i = 0; i < store.size(); ++i)
      store.at(i).value = gradcheck::random(store.at(i).value.rows(), store.at(i).value.cols(), rng, 0.5);
    std::vector<std::pair<std::string, Parameter<double>*>> params;
    for (std::size_t i = 0; i < store.size(); ++i) params.emplace_back(store.name(i), &store.at(i));
    const MatD w = gradcheck::random(9, 6, rng);
    const auto rep = gradcheck::check(
        [&](TapeD& t, const std::vector<VarD>& v) {
          return ad::weighted_sum(m(t, v[0], 12, 12, {v[1], v[2]}, 3).guided, w);
        },
        {gradcheck::random(144, 3, rng), gradcheck::random(64, 3, rng), gradcheck::random(64, 3, rng)}, params);
    CAPTURE(axis);
    CAPTURE(rep.worst);
    CHECK(rep.max_rel < 1e-6);
  }
}
