#pragma once

#include <algorithm>
#include <cmath>

#include "icseg/autodiff.hpp"

namespace icseg {

/// Normalized focal loss over one image:
///   p_t = pred where gt = 1, else 1 - pred, clamped to [eps, 1 - eps]
///   w   = (1 - p_t)^gamma
///   L   = -sum(w * log p_t) / sum(w)
/// L = 0 when sum(w) < 1e-12. pred and gt are (H*W) x 1 columns or any equal
/// shapes; gt holds 0/1 values.
///
/// With NflNormalizer::constant the backward pass treats sum(w) as a constant.
/// Differentiating through it adds -w'(p_t) * L / sum(w) per pixel, which
/// pushes pixels that are already right (loss below L) towards p_t = 0.5 and
/// stalls training; `full` is kept for gradient checks of upstream layers.
enum class NflNormalizer { constant, full };

template <typename S>
ad::Var<S> nfl_loss(ad::Var<S> pred, const Matrix<S>& gt, double gamma = 2.0,
                    NflNormalizer normalizer = NflNormalizer::constant) {
  if (pred.rows() != gt.rows() || pred.cols() != gt.cols()) throw std::invalid_argument("nfl_loss: shape mismatch");
  const S eps = S(1e-7);
  const Matrix<S>& p = pred.value();
  const Eigen::Index n = p.size();
  Matrix<S> pt(p.rows(), p.cols());
  Matrix<S> w(p.rows(), p.cols());
  Matrix<S> dpt(p.rows(), p.cols());  // d p_t / d pred, zero where clamped
  S sum_w = 0;
  S sum_wl = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool fg = gt.data()[i] > S(0.5);
    const S raw = fg ? p.data()[i] : S(1) - p.data()[i];
    const S v = std::clamp(raw, eps, S(1) - eps);
    pt.data()[i] = v;
    dpt.data()[i] = (raw < eps || raw > S(1) - eps) ? S(0) : (fg ? S(1) : S(-1));
    w.data()[i] = static_cast<S>(std::pow(static_cast<double>(S(1) - v), gamma));
    sum_w += w.data()[i];
    sum_wl += -w.data()[i] * std::log(v);
  }
  Matrix<S> out(1, 1);
  const bool degenerate = sum_w < S(1e-12);
  out(0, 0) = degenerate ? S(0) : sum_wl / sum_w;
  ad::Tape<S>* t = pred.tape;
  const S loss = normalizer == NflNormalizer::full ? out(0, 0) : S(0);
  return t->push(std::move(out), {pred}, [t, pred, pt, w, dpt, sum_w, loss, gamma, degenerate](const Matrix<S>& g) {
    Matrix<S> gp = Matrix<S>::Zero(pt.rows(), pt.cols());
    if (!degenerate) {
      for (Eigen::Index i = 0; i < pt.size(); ++i) {
        const S v = pt.data()[i];
        const S dw = gamma == 0.0 ? S(0)
                                  : static_cast<S>(-gamma * std::pow(static_cast<double>(S(1) - v), gamma - 1.0));
        const S l = -std::log(v);
        const S dl = S(-1) / v;
        gp.data()[i] = (dw * (l - loss) + w.data()[i] * dl) / sum_w * dpt.data()[i];
      }
    }
    t->accumulate(pred.id, gp * g(0, 0));
  });
}

}  // namespace icseg
