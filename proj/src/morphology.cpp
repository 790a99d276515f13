#include "icseg/morphology.hpp"

#include <cmath>
#include <limits>

namespace icseg {

Components connected_components(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Components out{LabelMap::Zero(h, w), {}};
  std::vector<int> stack;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      if (!mask(r, c) || out.labels(r, c) != 0) continue;
      const int id = out.count() + 1;
      int area = 0;
      stack.assign(1, r * w + c);
      out.labels(r, c) = id;
      while (!stack.empty()) {
        const int p = stack.back();
        stack.pop_back();
        ++area;
        const int pr = p / w;
        const int pc = p % w;
        const int nr[4] = {pr - 1, pr + 1, pr, pr};
        const int nc[4] = {pc, pc, pc - 1, pc + 1};
        for (int k = 0; k < 4; ++k) {
          if (nr[k] < 0 || nr[k] >= h || nc[k] < 0 || nc[k] >= w) continue;
          if (!mask(nr[k], nc[k]) || out.labels(nr[k], nc[k]) != 0) continue;
          out.labels(nr[k], nc[k]) = id;
          stack.push_back(nr[k] * w + nc[k]);
        }
      }
      out.areas.push_back(area);
    }
  return out;
}

BinaryMask erode3x3(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  BinaryMask out = BinaryMask::Constant(h, w, false);
  for (int r = 1; r + 1 < h; ++r)
    for (int c = 1; c + 1 < w; ++c) {
      bool keep = true;
      for (int dr = -1; dr <= 1 && keep; ++dr)
        for (int dc = -1; dc <= 1 && keep; ++dc) keep = mask(r + dr, c + dc);
      out(r, c) = keep;
    }
  return out;
}

namespace {

constexpr double kInf = 1e20;

// Felzenszwalb-Huttenlocher 1-D squared distance transform.
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  d.resize(n);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  int k = 0;
  v[0] = 0;
  z[0] = -std::numeric_limits<double>::infinity();
  z[1] = std::numeric_limits<double>::infinity();
  for (int q = 1; q < n; ++q) {
    double s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    while (s <= z[k]) {
      --k;
      s = ((f[q] + q * q) - (f[v[k]] + v[k] * v[k])) / (2.0 * q - 2.0 * v[k]);
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = std::numeric_limits<double>::infinity();
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    d[q] = (q - v[k]) * (q - v[k]) + f[v[k]];
  }
}

// Squared EDT to the zero-cost sites of `sites`.
Eigen::ArrayXXd squared_edt(const Eigen::ArrayXXd& cost) {
  const int h = static_cast<int>(cost.rows());
  const int w = static_cast<int>(cost.cols());
  Eigen::ArrayXXd out(h, w);
  std::vector<double> f, d, z;
  std::vector<int> v;
  for (int c = 0; c < w; ++c) {
    f.assign(h, 0.0);
    for (int r = 0; r < h; ++r) f[r] = cost(r, c);
    edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) out(r, c) = d[r];
  }
  for (int r = 0; r < h; ++r) {
    f.assign(w, 0.0);
    for (int c = 0; c < w; ++c) f[c] = out(r, c);
    edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) out(r, c) = d[c];
  }
  return out;
}

}  // namespace

Eigen::ArrayXXd distance_to_boundary(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  Eigen::ArrayXXd cost = Eigen::ArrayXXd::Zero(h + 2, w + 2);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) cost(r + 1, c + 1) = mask(r, c) ? kInf : 0.0;
  const Eigen::ArrayXXd sq = squared_edt(cost);
  return sq.block(1, 1, h, w).sqrt();
}

Eigen::ArrayXXd distance_to_mask(const BinaryMask& mask) {
  const int h = static_cast<int>(mask.rows());
  const int w = static_cast<int>(mask.cols());
  if (!mask.any()) return Eigen::ArrayXXd::Constant(h, w, std::numeric_limits<double>::infinity());
  Eigen::ArrayXXd cost(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) cost(r, c) = mask(r, c) ? 0.0 : kInf;
  return squared_edt(cost).sqrt();
}

}  // namespace icseg
