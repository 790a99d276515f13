#include "icseg/augment.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace icseg {

void GeometricTransform::inverse(double row, double col, double* src_row, double* src_col) const {
  const double cr = 0.5 * height, cc = 0.5 * width;
  const double y = (row - cr - shift_row) / scale, x = (col - cc - shift_col) / scale;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double ry = ca * y - sa * x;  // R(-theta)
  const double rx = sa * y + ca * x;
  *src_row = ry + cr;
  *src_col = flip ? width - (rx + cc) : rx + cc;
}

void GeometricTransform::forward(double row, double col, double* out_row, double* out_col) const {
  const double cr = 0.5 * height, cc = 0.5 * width;
  const double x0 = (flip ? width - col : col) - cc, y0 = row - cr;
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double y = ca * y0 + sa * x0;  // R(theta)
  const double x = -sa * y0 + ca * x0;
  *out_row = scale * y + cr + shift_row;
  *out_col = scale * x + cc + shift_col;
}

GeometricTransform sample_transform(int height, int width, const AugmentConfig& cfg, std::uint64_t seed) {
  if (height < 1 || width < 1) throw std::invalid_argument("sample_transform: empty raster");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  GeometricTransform t;
  t.height = height;
  t.width = width;
  // draw every variable so toggling one option does not shift the others
  const bool flip = unit(rng) < 0.5;
  const double angle = (2 * unit(rng) - 1) * cfg.max_rotation_deg * std::numbers::pi / 180.0;
  const double scale = cfg.min_scale + unit(rng) * (cfg.max_scale - cfg.min_scale);
  const double u = 2 * unit(rng) - 1, v = 2 * unit(rng) - 1;
  if (cfg.flip) t.flip = flip;
  if (cfg.rotate) t.angle = angle;
  if (cfg.scale) t.scale = scale;
  if (cfg.crop) {
    t.shift_row = u * std::abs(t.scale - 1.0) * 0.5 * height;
    t.shift_col = v * std::abs(t.scale - 1.0) * 0.5 * width;
  }
  return t;
}

Image apply_transform(const GeometricTransform& t, const Image& image) {
  if (image.height() != t.height || image.width() != t.width)
    throw std::invalid_argument("apply_transform: image size differs from the transform");
  if (t.identity()) return image;
  Image out(t.height, t.width);
  const int h = t.height, w = t.width;
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      double sr, sc;
      t.inverse(r + 0.5, c + 0.5, &sr, &sc);
      const double y = std::clamp(sr - 0.5, 0.0, h - 1.0), x = std::clamp(sc - 0.5, 0.0, w - 1.0);
      const int y0 = static_cast<int>(y), x0 = static_cast<int>(x);
      const int y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
      const float fy = static_cast<float>(y - y0), fx = static_cast<float>(x - x0);
      for (int ch = 0; ch < 3; ++ch)
        out(r, c, ch) = (1 - fy) * ((1 - fx) * image(y0, x0, ch) + fx * image(y0, x1, ch)) +
                        fy * ((1 - fx) * image(y1, x0, ch) + fx * image(y1, x1, ch));
    }
  return out;
}

namespace {

// Source pixel sampled by output pixel (r, c), or false when outside.
bool source_pixel(const GeometricTransform& t, int r, int c, int* sr, int* sc) {
  double y, x;
  t.inverse(r + 0.5, c + 0.5, &y, &x);
  *sr = static_cast<int>(std::floor(y));
  *sc = static_cast<int>(std::floor(x));
  return *sr >= 0 && *sr < t.height && *sc >= 0 && *sc < t.width;
}

}  // namespace

BinaryMask apply_transform(const GeometricTransform& t, const BinaryMask& mask) {
  if (mask.rows() != t.height || mask.cols() != t.width)
    throw std::invalid_argument("apply_transform: mask size differs from the transform");
  if (t.identity()) return mask;
  BinaryMask out = BinaryMask::Constant(t.height, t.width, false);
  for (int r = 0; r < t.height; ++r)
    for (int c = 0; c < t.width; ++c) {
      int sr, sc;
      if (source_pixel(t, r, c, &sr, &sc)) out(r, c) = mask(sr, sc);
    }
  return out;
}

std::optional<Click> apply_transform(const GeometricTransform& t, const Click& click) {
  if (t.identity()) return click;
  double y, x;
  t.forward(click.row + 0.5, click.col + 0.5, &y, &x);
  const int r0 = static_cast<int>(std::floor(y)), c0 = static_cast<int>(std::floor(x));
  // the rounded forward image usually samples the click's own pixel; search
  // the neighbourhood (nearest first) for one that does
  std::optional<Click> best;
  double best_d = 1e300;
  for (int dr = -1; dr <= 1; ++dr)
    for (int dc = -1; dc <= 1; ++dc) {
      const int r = r0 + dr, c = c0 + dc;
      if (r < 0 || r >= t.height || c < 0 || c >= t.width) continue;
      int sr, sc;
      if (!source_pixel(t, r, c, &sr, &sc) || sr != click.row || sc != click.col) continue;
      const double d = (r + 0.5 - y) * (r + 0.5 - y) + (c + 0.5 - x) * (c + 0.5 - x);
      if (d < best_d) {
        best_d = d;
        best = Click{r, c, click.polarity, click.order};
      }
    }
  return best;
}

AugmentedSample augment(const Image& image, const std::vector<BinaryMask>& masks, const ClickSet& clicks,
                        const AugmentConfig& cfg, std::uint64_t seed) {
  AugmentedSample out;
  out.transform = sample_transform(image.height(), image.width(), cfg, seed);
  out.image = apply_transform(out.transform, image);
  for (const auto& m : masks) out.masks.push_back(apply_transform(out.transform, m));
  for (const auto& c : clicks) {
    const auto mapped = apply_transform(out.transform, c);
    if (mapped)
      push_click(out.clicks, mapped->row, mapped->col, mapped->polarity);
    else
      ++out.dropped_clicks;
  }
  return out;
}

}  // namespace icseg
