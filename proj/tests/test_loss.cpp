#include "doctest.h"

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "icseg/loss.hpp"

using namespace icseg;
using gradcheck::MatD;
using gradcheck::TapeD;
using gradcheck::VarD;

TEST_CASE("2x2 focal loss against a hand-summed oracle") {
  MatD pred(2, 2), gt(2, 2);
  pred << 0.9, 0.1, 0.8, 0.3;
  gt << 1, 0, 1, 0;
  // p_t = 0.9, 0.9, 0.8, 0.7 ; w = 0.01, 0.01, 0.04, 0.09
  const double num = 0.01 * -std::log(0.9) + 0.01 * -std::log(0.9) + 0.04 * -std::log(0.8) + 0.09 * -std::log(0.7);
  const double den = 0.01 + 0.01 + 0.04 + 0.09;
  TapeD t(false);
  CHECK(nfl_loss(t.constant(pred), gt).value()(0, 0) == doctest::Approx(num / den).epsilon(1e-12));
}

TEST_CASE("gamma zero is mean binary cross-entropy") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0.02, 0.98);
  MatD pred(6, 5), gt(6, 5);
  double bce = 0;
  for (int i = 0; i < 30; ++i) {
    pred.data()[i] = u(rng);
    gt.data()[i] = (rng() & 1) ? 1.0 : 0.0;
    bce += gt.data()[i] > 0.5 ? -std::log(pred.data()[i]) : -std::log(1 - pred.data()[i]);
  }
  TapeD t(false);
  CHECK(nfl_loss(t.constant(pred), gt, 0.0).value()(0, 0) == doctest::Approx(bce / 30).epsilon(1e-12));
}

TEST_CASE("near-perfect prediction gives near-zero loss; degenerate gives zero") {
  MatD gt(3, 3);
  gt << 1, 0, 1, 0, 1, 0, 1, 0, 1;
  TapeD t(true);
  MatD almost = gt.unaryExpr([](double g) { return g > 0.5 ? 1 - 1e-6 : 1e-6; });
  CHECK(nfl_loss(t.constant(almost), gt).value()(0, 0) < 1e-5);
  // p_t clamps to 1 - 1e-7 everywhere: w = 1e-14 each, sum below the 1e-12 floor
  const VarD exact = t.leaf(gt);
  const VarD l = nfl_loss(exact, gt);
  CHECK(l.value()(0, 0) == 0.0);
  t.backward(l);
  CHECK(t.grad(exact).isZero());
  CHECK_THROWS_AS(nfl_loss(t.constant(MatD::Zero(2, 2)), gt), std::invalid_argument);
}

TEST_CASE("focal loss gradient including the normaliser") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (const double gamma : {0.0, 1.0, 2.0}) {
    MatD pred(8, 8), gt(8, 8);
    for (int i = 0; i < 64; ++i) {
      pred.data()[i] = u(rng);
      gt.data()[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
    }
    const auto rep = gradcheck::check(
        [&](TapeD&, const std::vector<VarD>& v) { return nfl_loss(v[0], gt, gamma, NflNormalizer::full); }, {pred},
        {});
    CAPTURE(gamma);
    CHECK(rep.max_rel < 1e-6);
  }
}

TEST_CASE("constant-normaliser gradient matches differences with sum(w) frozen") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.05, 0.95);
  for (const double gamma : {0.0, 1.0, 2.0}) {
    MatD pred(6, 6), gt(6, 6);
    for (int i = 0; i < 36; ++i) {
      pred.data()[i] = u(rng);
      gt.data()[i] = (rng() % 3 == 0) ? 1.0 : 0.0;
    }
    auto terms = [&](const MatD& p, double* sum_w) {
      double wl = 0, sw = 0;
      for (int i = 0; i < 36; ++i) {
        const double pt = gt.data()[i] > 0.5 ? p.data()[i] : 1 - p.data()[i];
        const double w = std::pow(1 - pt, gamma);
        wl += -w * std::log(pt);
        sw += w;
      }
      if (sum_w) *sum_w = sw;
      return wl;
    };
    double frozen = 0;
    terms(pred, &frozen);
    TapeD t(true);
    const VarD x = t.leaf(pred);
    t.backward(nfl_loss(x, gt, gamma));
    const MatD analytic = t.grad(x);
    const double h = 1e-6;
    double worst = 0;
    for (int i = 0; i < 36; ++i) {
      MatD a = pred, b = pred;
      a.data()[i] += h;
      b.data()[i] -= h;
      const double numeric = (terms(a, nullptr) - terms(b, nullptr)) / (2 * h) / frozen;
      worst = std::max(worst, std::abs(numeric - analytic.data()[i]) / (std::abs(numeric) + 1e-9));
    }
    CAPTURE(gamma);
    CHECK(worst < 1e-6);
    if (gamma == 0.0) {
      // constant weights: both modes agree
      TapeD t2(true);
      const VarD y = t2.leaf(pred);
      t2.backward(nfl_loss(y, gt, gamma, NflNormalizer::full));
      CHECK((t2.grad(y) - analytic).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("constant-normaliser gradient never pushes a pixel away from its label") {
  MatD pred(1, 4), gt(1, 4);
  pred << 0.95, 0.6, 0.2, 0.45;
  gt << 1, 1, 0, 0;
  TapeD t(true);
  const VarD x = t.leaf(pred);
  t.backward(nfl_loss(x, gt));
  const MatD g = t.grad(x);
  CHECK(g(0, 0) < 0);  // descent raises foreground probabilities
  CHECK(g(0, 1) < 0);
  CHECK(g(0, 2) > 0);  // and lowers background ones
  CHECK(g(0, 3) > 0);
  TapeD t2(true);
  const VarD y = t2.leaf(pred);
  t2.backward(nfl_loss(y, gt, 2.0, NflNormalizer::full));
  CHECK(t2.grad(y)(0, 0) > 0);  // the confident pixel is pushed back towards 0.5
}
