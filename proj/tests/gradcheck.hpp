#pragma once

// Central finite-difference gradient checks in double precision.

#include <cmath>
#include <functional>
#include <algorithm>
#include <random>
#include <string>
#include <vector>

#include "icseg/autodiff.hpp"

namespace gradcheck {

using MatD = icseg::Matrix<double>;
using VarD = icseg::ad::Var<double>;
using TapeD = icseg::ad::Tape<double>;
using Fn = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

struct Report {
  double max_rel = 0.0;
  std::string worst;
  int tensors = 0;
};

/// ||a - n|| / (||a|| + ||n||). Gradients that are zero in exact arithmetic
/// (e.g. a bias shared by every key of a softmax) leave only rounding noise in
/// both terms, so below kZeroNorm the absolute difference is reported instead.
inline constexpr double kZeroNorm = 1e-7;

/// `floor` bounds the denominator from below for tensors whose gradients are
/// small but nonzero, where central-difference rounding (about eps*|f|/h per
/// entry) would otherwise dominate the ratio.
inline double relative_error(const MatD& a, const MatD& n, double floor = 0.0) {
  const double denom = a.norm() + n.norm();
  return denom < kZeroNorm ? (a - n).norm() : (a - n).norm() / std::max(denom, floor);
}

inline double evaluate(const Fn& f, const std::vector<MatD>& inputs) {
  TapeD t(false);
  std::vector<VarD> vars;
  for (const auto& m : inputs) vars.push_back(t.constant(m));
  return f(t, vars).value()(0, 0);
}

/// Checks d f / d inputs and d f / d params. With max_entries > 0 only that
/// many randomly chosen entries per tensor are perturbed (the analytic
/// gradient is compared on those entries only).
inline Report check(const Fn& f, std::vector<MatD> inputs, const std::vector<std::pair<std::string, icseg::ad::Parameter<double>*>>& params,
                    double h = 1e-5, int max_entries = 0, std::uint64_t seed = 1, double floor = 0.0) {
  TapeD t(true);
  std::vector<VarD> vars;
  for (const auto& m : inputs) vars.push_back(t.leaf(m));
  for (const auto& p : params) p.second->zero_grad();
  t.backward(f(t, vars));

  std::mt19937_64 rng(seed);
  Report rep;
  auto pick = [&](Eigen::Index size) {
    std::vector<Eigen::Index> idx;
    if (max_entries <= 0 || size <= max_entries) {
      for (Eigen::Index i = 0; i < size; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<Eigen::Index> u(0, size - 1);
      for (int k = 0; k < max_entries; ++k) idx.push_back(u(rng));
    }
    return idx;
  };
  auto record = [&](const std::string& name, const MatD& analytic, const MatD& numeric) {
    const double e = relative_error(analytic, numeric, floor);
    ++rep.tensors;
    if (e >= rep.max_rel) {
      rep.max_rel = e;
      rep.worst = name;
    }
  };

  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const MatD g = t.grad(vars[k]);
    const auto idx = pick(inputs[k].size());
    MatD a(1, idx.size()), n(1, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      double& x = inputs[k].data()[idx[j]];
      const double x0 = x;
      x = x0 + h;
      const double fp = evaluate(f, inputs);
      x = x0 - h;
      const double fm = evaluate(f, inputs);
      x = x0;
      a(0, j) = g.data()[idx[j]];
      n(0, j) = (fp - fm) / (2 * h);
    }
    record("input" + std::to_string(k), a, n);
  }
  for (const auto& [name, p] : params) {
    const MatD g = p->grad;
    const auto idx = pick(p->value.size());
    MatD a(1, idx.size()), n(1, idx.size());
    for (std::size_t j = 0; j < idx.size(); ++j) {
      double& x = p->value.data()[idx[j]];
      const double x0 = x;
      x = x0 + h;
      const double fp = evaluate(f, inputs);
      x = x0 - h;
      const double fm = evaluate(f, inputs);
      x = x0;
      a(0, j) = g.data()[idx[j]];
      n(0, j) = (fp - fm) / (2 * h);
    }
    record(name, a, n);
  }
  return rep;
}

inline MatD random(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  MatD m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace gradcheck
