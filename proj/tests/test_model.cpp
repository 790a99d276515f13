#include "doctest.h"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <random>

#include "gradcheck.hpp"
#include "icseg/loss.hpp"
#include "icseg/model.hpp"

using namespace icseg;
using gradcheck::MatD;
using gradcheck::TapeD;
using gradcheck::VarD;

namespace {

Image noise_image(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  Image img(h, w);
  for (Eigen::Index i = 0; i < img.pixels().size(); ++i) img.pixels().data()[i] = u(rng);
  return img;
}

BinaryMask square(int size, int r0, int c0, int side) {
  BinaryMask m = empty_mask({size, size});
  m.block(r0, c0, side, side).setConstant(true);
  return m;
}

ExemplarTarget frozen_exemplar(int size) {
  ClickSet clicks;
  push_click(clicks, size / 4 + 2, size / 4 + 2, Polarity::positive);
  ExemplarTarget ex(square(size, size / 4, size / 4, size / 4), clicks);
  ex.freeze();
  return ex;
}

PPInput<float> tiny_input(const ModelConfig& c) {
  const int s = c.image_size;
  const Image img = noise_image(s, s, 3);
  ClickSet recall;
  push_click(recall, 3 * s / 4, 3 * s / 4, Polarity::positive);
  push_click(recall, 2, 2, Polarity::negative);
  ClickSet ex_clicks;
  push_click(ex_clicks, s / 4 + 2, s / 4 + 2, Polarity::positive);
  return build_pp_input(img, recall, empty_mask({s, s}), square(s, s / 4, s / 4, s / 4), ex_clicks, c, {});
}

template <typename S>
double grad_norm(const ParameterStore<S>& store, const std::string& prefix) {
  double n = 0;
  for (std::size_t i = 0; i < store.size(); ++i)
    if (store.name(i).rfind(prefix, 0) == 0) n += static_cast<double>(store.at(i).grad.squaredNorm());
  return std::sqrt(n);
}

}  // namespace

TEST_CASE("single-object network shape, range and determinism") {
  const auto model = std::make_shared<const ICMFormer<float>>(ModelConfig::tiny(), 7);
  const ICMFormerPredictor pred(model);
  const Image img = noise_image(48, 40, 1);
  ClickSet clicks;
  push_click(clicks, 20, 20, Polarity::positive);
  const ProbMap a = pred.predict(img, clicks, {});
  CHECK(a.rows() == 48);
  CHECK(a.cols() == 40);
  CHECK((a.array() > 0).all());
  CHECK((a.array() < 1).all());
  const ProbMap b = pred.predict(img, clicks, {});
  CHECK(std::memcmp(a.data(), b.data(), sizeof(float) * a.size()) == 0);

  ForwardTrace<float> trace;
  pred.predict(img, clicks, {}, &trace);
  CHECK(trace.image_tokens.rows() == ModelConfig::tiny().tokens());
  CHECK(trace.fused.cols() == ModelConfig::tiny().embed_dim);

  ClickSet neg_only;
  push_click(neg_only, 5, 5, Polarity::negative);
  CHECK_THROWS_AS(pred.predict(img, neg_only, {}), std::invalid_argument);
  CHECK_THROWS_AS(pred.predict(img, {}, {}), std::invalid_argument);
  ClickSet outside;
  push_click(outside, 48, 0, Polarity::positive);
  CHECK_THROWS_AS(pred.predict(img, outside, {}), std::invalid_argument);
}

TEST_CASE("same seed, same parameters; different seed, different parameters") {
  const ICMFormerPP<float> a(ModelConfig::tiny(), 3), b(ModelConfig::tiny(), 3), c(ModelConfig::tiny(), 4);
  REQUIRE(a.params().size() == b.params().size());
  bool any_diff = false;
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params().at(i).value == b.params().at(i).value);
    if (!a.params().at(i).value.isZero() && a.params().at(i).value != c.params().at(i).value) any_diff = true;
  }
  CHECK(any_diff);
}

TEST_CASE("exemplar-driven network contracts") {
  const ModelConfig cfg = ModelConfig::tiny();
  const auto model = std::make_shared<const ICMFormerPP<float>>(cfg, 11);
  const ICMFormerPPPredictor pred(model);
  const Image img = noise_image(32, 32, 5);
  const ExemplarTarget ex = frozen_exemplar(32);

  // round 0: no recall clicks at all is valid (pure propagation)
  const ProbMap p0 = pred.predict(img, {}, {}, ex);
  CHECK(p0.rows() == 32);
  CHECK((p0.array() > 0).all());
  CHECK((p0.array() < 1).all());
  const ProbMap p1 = pred.predict(img, {}, {}, ex);
  CHECK(std::memcmp(p0.data(), p1.data(), sizeof(float) * p0.size()) == 0);

  ExemplarTarget open(ex.mask(), ex.clicks());
  CHECK_THROWS_AS(pred.predict(img, {}, {}, open), std::invalid_argument);

  ForwardTrace<float> trace;
  pred.predict(img, {}, {}, ex, &trace);
  CHECK(trace.f_e.rows() == cfg.tokens());
  CHECK(trace.f_r.rows() == cfg.tokens());
  CHECK(trace.response.rows() == (32 / 8) * (32 / 8));
  CHECK(trace.response.cols() == (cfg.eim_crop_size / 8) * (cfg.eim_crop_size / 8));
}

TEST_CASE("frozen exemplar is immutable") {
  ExemplarTarget ex = frozen_exemplar(16);
  CHECK(ex.frozen());
  CHECK_THROWS_AS(ex.set(square(16, 0, 0, 3), {}), std::logic_error);
  CHECK_THROWS_AS(ex.freeze(), std::logic_error);
  ExemplarTarget empty(empty_mask({8, 8}), {});
  CHECK_THROWS_AS(empty.freeze(), std::invalid_argument);
}

TEST_CASE("exemplar click selection and input ablations") {
  const BinaryMask ex_mask = square(32, 4, 4, 8);
  const BinaryMask other = square(32, 20, 20, 8);
  ClickSet clicks;
  push_click(clicks, 6, 6, Polarity::positive);
  push_click(clicks, 22, 22, Polarity::negative);  // inside another same-category object
  push_click(clicks, 8, 8, Polarity::positive);
  push_click(clicks, 0, 31, Polarity::negative);  // genuine background
  ExemplarInputOptions opt;
  const ClickSet sel = select_exemplar_clicks(clicks, ex_mask, {ex_mask, other}, opt);
  REQUIRE(sel.size() == 3);
  CHECK(sel[2].row == 0);
  opt.positives = ExemplarInputOptions::Positives::first;
  opt.negatives = ExemplarInputOptions::Negatives::none;
  const ClickSet one = select_exemplar_clicks(clicks, ex_mask, {ex_mask, other}, opt);
  REQUIRE(one.size() == 1);
  CHECK(one[0].row == 6);
  // no known objects: every negative is kept
  CHECK(select_exemplar_clicks(clicks, ex_mask, {}, {}).size() == 4);

  const ModelConfig cfg = ModelConfig::tiny();
  const Image img = noise_image(32, 32, 9);
  ExemplarInputOptions zero;
  zero.zero_exemplar = true;
  const PPInput<float> z = build_pp_input(img, {}, empty_mask({32, 32}), ex_mask, sel, cfg, zero);
  CHECK(z.exemplar_guidance.isZero());
  REQUIRE(z.crops.size() == cfg.eim_scales.size());
  for (const auto& c : z.crops) CHECK(c.isZero());
  CHECK(z.image == img.pixels());

  ExemplarInputOptions masked;
  masked.image = ExemplarInputOptions::ImageMode::masked;
  masked.use_mask = false;
  const PPInput<float> m = build_pp_input(img, {}, empty_mask({32, 32}), ex_mask, sel, cfg, masked);
  CHECK(m.exemplar_guidance.col(2).isZero());
  CHECK(m.image.row(31 * 32 + 31).isZero());
  CHECK(m.image.row(8 * 32 + 8) == img.pixels().row(8 * 32 + 8));
  CHECK(m.crops.front().rows() == cfg.eim_crop_size * cfg.eim_crop_size);
}

TEST_CASE("loss gradients reach both S1 branches and the exemplar module") {
  const ModelConfig cfg = ModelConfig::tiny();
  ICMFormerPP<double> model(cfg, 21);
  const PPInput<double> in = tiny_input(cfg).cast<double>();
  MatD gt = MatD::Zero(32 * 32, 1);
  for (int r = 20; r < 28; ++r) gt.block(r * 32 + 20, 0, 8, 1).setOnes();

  auto run = [&] {
    model.params().zero_grad();
    TapeD t(true);
    t.backward(nfl_loss(ad::sigmoid(model.logits(t, in)), gt));
  };
  run();
  CHECK(grad_norm(model.params(), "s1.") > 0);
  CHECK(grad_norm(model.params(), "embed.") > 0);
  CHECK(grad_norm(model.params(), "cross_exemplar.") > 0);
  CHECK(grad_norm(model.params(), "fusion.") > 0);
  CHECK(grad_norm(model.params(), "eim.merge.") > 0);
  // the zero-initialised merge blocks the encoder at step 0; any nonzero merge opens it
  CHECK(grad_norm(model.params(), "eim.encoder.") == 0);
  std::mt19937_64 rng(1);
  model.params().get("eim.merge.weight").value = gradcheck::random(model.params().get("eim.merge.weight").value.rows(),
                                                                   cfg.embed_dim, rng, 0.1);
  run();
  CHECK(grad_norm(model.params(), "eim.encoder.") > 0);
  CHECK(grad_norm(model.params(), "eim.proj_exemplar.") > 0);

  // single-object network: both streams feed the shared S1
  ICMFormer<double> single(cfg, 22);
  const Image img = noise_image(32, 32, 4);
  ClickSet clicks;
  push_click(clicks, 10, 10, Polarity::positive);
  const MatD g = guidance_matrix(clicks, {32, 32}, empty_mask({32, 32}), cfg.click_radius).cast<double>();
  single.params().zero_grad();
  TapeD t(true);
  t.backward(nfl_loss(ad::sigmoid(single.logits(t, img.pixels().cast<double>(), g)), gt));
  CHECK(grad_norm(single.params(), "image_embed.") > 0);
  CHECK(grad_norm(single.params(), "guidance_embed.") > 0);
  CHECK(grad_norm(single.params(), "s1.") > 0);
  CHECK(grad_norm(single.params(), "s2.") > 0);
}

TEST_CASE("full tiny exemplar-driven forward agrees with finite differences") {
  ModelConfig cfg = ModelConfig::tiny();
  ICMFormerPP<double> model(cfg, 31);
  std::mt19937_64 rng(2);
  // open the exemplar path so the whole chain is exercised
  auto& merge = model.params().get("eim.merge.weight").value;
  merge = gradcheck::random(merge.rows(), merge.cols(), rng, 0.2);
  const PPInput<double> in = tiny_input(cfg).cast<double>();
  MatD gt = MatD::Zero(32 * 32, 1);
  for (int r = 8; r < 16; ++r) gt.block(r * 32 + 8, 0, 8, 1).setOnes();

  std::vector<std::pair<std::string, Parameter<double>*>> params;
  for (std::size_t i = 0; i < model.params().size(); ++i)
    params.emplace_back(model.params().name(i), &model.params().at(i));
  // Some tensors (e.g. deep LayerNorm shifts) have gradients near 1e-8, where
  // rounding in the difference quotient is ~1e-10; a larger step would cross
  // ReLU kinks elsewhere, so the ratio's denominator is floored at 1e-6.
  const auto rep = gradcheck::check(
      [&](TapeD& t, const std::vector<VarD>&) {
        return nfl_loss(ad::sigmoid(model.logits(t, in)), gt, 2.0, NflNormalizer::full);
      },
      {}, params,
      1e-5, 6, 3, 1e-6);
  CAPTURE(rep.worst);
  CHECK(rep.tensors == static_cast<int>(model.params().size()));
  CHECK(rep.max_rel < 1e-3);
}

TEST_CASE("checkpoint round trip and validation") {
  const auto dir = std::filesystem::temp_directory_path() / "icseg_test_model";
  std::filesystem::create_directories(dir);
  const std::string path = (dir / "m.ckpt").string();
  const ICMFormerPP<float> a(ModelConfig::tiny(), 1);
  ICMFormerPP<float> b(ModelConfig::tiny(), 2);
  save_checkpoint(a.params(), path);
  load_checkpoint(b.params(), path);
  for (std::size_t i = 0; i < a.params().size(); ++i) CHECK(a.params().at(i).value == b.params().at(i).value);

  ICMFormer<float> other(ModelConfig::tiny(), 1);
  CHECK_THROWS(load_checkpoint(other.params(), path));
  std::FILE* f = std::fopen(path.c_str(), "wb");
  std::fputs("garbage", f);
  std::fclose(f);
  CHECK_THROWS(load_checkpoint(b.params(), path));
  std::filesystem::remove_all(dir);
}

TEST_CASE("model config profiles and json round trip") {
  const ModelConfig full = ModelConfig::full();
  CHECK(full.image_size == 448);
  CHECK(full.patch_size == 16);
  CHECK(full.embed_dim == 768);
  CHECK(full.num_heads == 12);
  CHECK(full.s1_depth == 6);
  CHECK(full.click_radius == 5);
  nlohmann::json j = ModelConfig::desk();
  const ModelConfig back = j.get<ModelConfig>();
  CHECK(nlohmann::json(back) == j);
  j["image_size"] = 66;
  CHECK_THROWS(j.get<ModelConfig>());
}
