#include "icseg/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace icseg {

Image::Image(int height, int width)
    : height_(height), width_(width), pixels_(Matrix<float>::Zero(static_cast<Eigen::Index>(height) * width, 3)) {}

Image::Image(int height, int width, Matrix<float> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.rows() != static_cast<Eigen::Index>(height) * width || pixels_.cols() != 3)
    throw std::invalid_argument("image pixel matrix does not match its shape");
}

void Image::validate() const {
  if (height_ < 16 || width_ < 16)
    throw std::invalid_argument("image must be at least 16x16, got " + std::to_string(height_) + "x" +
                                std::to_string(width_));
  if (!pixels_.allFinite()) throw std::invalid_argument("image contains non-finite values");
  if (pixels_.minCoeff() < 0.0f || pixels_.maxCoeff() > 1.0f)
    throw std::invalid_argument("image values must lie in [0,1]");
}

std::string to_string(Polarity p) { return p == Polarity::positive ? "positive" : "negative"; }

Polarity polarity_from_string(const std::string& s) {
  if (s == "positive" || s == "pos" || s == "+") return Polarity::positive;
  if (s == "negative" || s == "neg" || s == "-") return Polarity::negative;
  throw std::invalid_argument("unknown click polarity '" + s + "'");
}

void push_click(ClickSet& clicks, int row, int col, Polarity polarity) {
  clicks.push_back({row, col, polarity, static_cast<int>(clicks.size())});
}

void validate_clicks(const ClickSet& clicks, int height, int width) {
  std::vector<bool> seen(clicks.size(), false);
  for (const auto& c : clicks) {
    if (c.row < 0 || c.row >= height || c.col < 0 || c.col >= width) {
      std::ostringstream os;
      os << "click #" << c.order << " at (" << c.row << "," << c.col << ") is outside " << height << "x" << width;
      throw std::invalid_argument(os.str());
    }
    if (c.order < 0 || c.order >= static_cast<int>(clicks.size()) || seen[c.order])
      throw std::invalid_argument("click orders must be unique and contiguous from 0");
    seen[c.order] = true;
  }
}

ClickSet positives(const ClickSet& clicks) {
  ClickSet out;
  for (const auto& c : clicks)
    if (c.positive()) out.push_back(c);
  return out;
}

ClickSet negatives(const ClickSet& clicks) {
  ClickSet out;
  for (const auto& c : clicks)
    if (!c.positive()) out.push_back(c);
  return out;
}

Matrix<float> GuidanceStack::as_matrix() const {
  const Eigen::Index n = pos_map.size();
  Matrix<float> m(n, 3);
  m.col(0) = Eigen::Map<const Eigen::VectorXf>(pos_map.data(), n);
  m.col(1) = Eigen::Map<const Eigen::VectorXf>(neg_map.data(), n);
  m.col(2) = Eigen::Map<const Eigen::VectorXf>(prev_mask.data(), n);
  return m;
}

std::pair<ProbMap, ProbMap> encode_clicks(const ClickSet& clicks, Shape shape, int radius) {
  if (radius < 1) throw std::invalid_argument("click radius must be >= 1");
  for (const auto& c : clicks) {
    if (c.row < 0 || c.row >= shape.height || c.col < 0 || c.col >= shape.width) {
      std::ostringstream os;
      os << "click #" << c.order << " at (" << c.row << "," << c.col << ") is outside " << shape.height << "x"
         << shape.width;
      throw std::invalid_argument(os.str());
    }
  }
  ProbMap pos = ProbMap::Zero(shape.height, shape.width);
  ProbMap neg = ProbMap::Zero(shape.height, shape.width);
  const int r2 = radius * radius;
  for (const auto& c : clicks) {
    ProbMap& target = c.positive() ? pos : neg;
    for (int dr = -radius; dr <= radius; ++dr) {
      const int r = c.row + dr;
      if (r < 0 || r >= shape.height) continue;
      for (int dc = -radius; dc <= radius; ++dc) {
        const int cc = c.col + dc;
        if (cc < 0 || cc >= shape.width || dr * dr + dc * dc > r2) continue;
        target(r, cc) = 1.0f;
      }
    }
  }
  return {std::move(pos), std::move(neg)};
}

GuidanceStack compose_guidance(ProbMap pos_map, ProbMap neg_map, ProbMap prev_mask) {
  if (pos_map.rows() != neg_map.rows() || pos_map.cols() != neg_map.cols() || pos_map.rows() != prev_mask.rows() ||
      pos_map.cols() != prev_mask.cols())
    throw std::invalid_argument("guidance rasters must share one shape");
  return {std::move(pos_map), std::move(neg_map), std::move(prev_mask)};
}

GuidanceStack make_guidance(const ClickSet& clicks, Shape shape, const BinaryMask& prev, int radius) {
  auto [pos, neg] = encode_clicks(clicks, shape, radius);
  ProbMap prev_map = prev.size() == 0 ? ProbMap::Zero(shape.height, shape.width) : to_prob(prev);
  return compose_guidance(std::move(pos), std::move(neg), std::move(prev_map));
}

double iou(const BinaryMask& a, const BinaryMask& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw std::invalid_argument("iou: mask shapes differ");
  const auto uni = (a || b).count();
  if (uni == 0) return 1.0;
  return static_cast<double>((a && b).count()) / static_cast<double>(uni);
}

BinaryMask binarize(const ProbMap& p, float threshold) {
  if (!(threshold > 0.0f && threshold < 1.0f)) throw std::invalid_argument("binarize threshold must be in (0,1)");
  return p >= threshold;
}

ProbMap to_prob(const BinaryMask& m) { return m.cast<float>(); }

BinaryMask empty_mask(Shape shape) { return BinaryMask::Constant(shape.height, shape.width, false); }

BoundingBox tight_bbox(const BinaryMask& mask) {
  BoundingBox box{static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), 0, 0};
  for (Eigen::Index r = 0; r < mask.rows(); ++r)
    for (Eigen::Index c = 0; c < mask.cols(); ++c)
      if (mask(r, c)) {
        box.row0 = std::min(box.row0, static_cast<int>(r));
        box.col0 = std::min(box.col0, static_cast<int>(c));
        box.row1 = std::max(box.row1, static_cast<int>(r) + 1);
        box.col1 = std::max(box.col1, static_cast<int>(c) + 1);
      }
  if (box.row1 == 0) return {};
  return box;
}

std::vector<LinearTap> bilinear_taps(int in_size, int out_size) {
  std::vector<LinearTap> taps(out_size);
  const double scale = static_cast<double>(in_size) / out_size;
  for (int o = 0; o < out_size; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    if (src < 0) src = 0;
    int i0 = static_cast<int>(std::floor(src));
    if (i0 > in_size - 1) i0 = in_size - 1;
    const int i1 = std::min(i0 + 1, in_size - 1);
    const double w1 = i1 == i0 ? 0.0 : src - i0;
    taps[o] = {i0, i1, 1.0 - w1, w1};
  }
  return taps;
}

namespace {

template <typename Getter, typename Setter>
void resample(int in_h, int in_w, int out_h, int out_w, int channels, Getter get, Setter set) {
  const auto ty = bilinear_taps(in_h, out_h);
  const auto tx = bilinear_taps(in_w, out_w);
  for (int r = 0; r < out_h; ++r)
    for (int c = 0; c < out_w; ++c)
      for (int ch = 0; ch < channels; ++ch) {
        const auto& y = ty[r];
        const auto& x = tx[c];
        const double v = y.w0 * (x.w0 * get(y.i0, x.i0, ch) + x.w1 * get(y.i0, x.i1, ch)) +
                         y.w1 * (x.w0 * get(y.i1, x.i0, ch) + x.w1 * get(y.i1, x.i1, ch));
        set(r, c, ch, v);
      }
}

}  // namespace

ProbMap resize_bilinear(const ProbMap& src, int height, int width) {
  if (src.rows() == height && src.cols() == width) return src;
  ProbMap out(height, width);
  resample(
      static_cast<int>(src.rows()), static_cast<int>(src.cols()), height, width, 1,
      [&](int r, int c, int) { return static_cast<double>(src(r, c)); },
      [&](int r, int c, int, double v) { out(r, c) = static_cast<float>(v); });
  return out;
}

Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height() == height && src.width() == width) return src;
  Image out(height, width);
  resample(
      src.height(), src.width(), height, width, 3,
      [&](int r, int c, int ch) { return static_cast<double>(src(r, c, ch)); },
      [&](int r, int c, int ch, double v) { out(r, c, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0)); });
  return out;
}

BinaryMask resize_nearest(const BinaryMask& src, int height, int width) {
  if (src.rows() == height && src.cols() == width) return src;
  BinaryMask out(height, width);
  for (int r = 0; r < height; ++r) {
    const int sr = std::min(static_cast<int>((r + 0.5) * src.rows() / height), static_cast<int>(src.rows()) - 1);
    for (int c = 0; c < width; ++c) {
      const int sc = std::min(static_cast<int>((c + 0.5) * src.cols() / width), static_cast<int>(src.cols()) - 1);
      out(r, c) = src(sr, sc);
    }
  }
  return out;
}

Image crop(const Image& src, const BoundingBox& box) {
  if (box.empty() || box.row0 < 0 || box.col0 < 0 || box.row1 > src.height() || box.col1 > src.width())
    throw std::invalid_argument("crop box outside image");
  Image out(box.height(), box.width());
  for (int r = 0; r < box.height(); ++r)
    for (int c = 0; c < box.width(); ++c)
      for (int ch = 0; ch < 3; ++ch) out(r, c, ch) = src(box.row0 + r, box.col0 + c, ch);
  return out;
}

}  // namespace icseg
