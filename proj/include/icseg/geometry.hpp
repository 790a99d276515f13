#pragma once

#include <utility>

#include "icseg/types.hpp"

namespace icseg {

/// Raster interaction encoding fed to the network next to the image.
/// Channel order is fixed: 0 = positive disks, 1 = negative disks, 2 = previous mask.
struct GuidanceStack {
  ProbMap pos_map;
  ProbMap neg_map;
  ProbMap prev_mask;

  int height() const { return static_cast<int>(pos_map.rows()); }
  int width() const { return static_cast<int>(pos_map.cols()); }

  /// (H*W) x 3 matrix in the documented channel order.
  Matrix<float> as_matrix() const;
};

/// Disk maps of the positive and negative clicks. A pixel is set iff its
/// Euclidean distance to some click of that polarity is <= radius.
std::pair<ProbMap, ProbMap> encode_clicks(const ClickSet& clicks, Shape shape, int radius = 5);

GuidanceStack compose_guidance(ProbMap pos_map, ProbMap neg_map, ProbMap prev_mask);

/// Convenience: encode + compose with an all-zero previous mask when prev is empty.
GuidanceStack make_guidance(const ClickSet& clicks, Shape shape, const BinaryMask& prev, int radius);

/// Intersection over union. Both masks empty yields 1.
double iou(const BinaryMask& a, const BinaryMask& b);

/// p >= threshold maps to true.
BinaryMask binarize(const ProbMap& p, float threshold = 0.5f);

ProbMap to_prob(const BinaryMask& m);

BinaryMask empty_mask(Shape shape);

/// Tight bounds of the set pixels; empty box when the mask is empty.
BoundingBox tight_bbox(const BinaryMask& mask);

/// One output sample of 1-D linear interpolation: value = w0*in[i0] + w1*in[i1].
struct LinearTap {
  int i0 = 0;
  int i1 = 0;
  double w0 = 1.0;
  double w1 = 0.0;
};

/// Half-pixel-center taps (align_corners = false), borders clamped.
std::vector<LinearTap> bilinear_taps(int in_size, int out_size);

/// Bilinear resampling with half-pixel centers (align_corners = false).
ProbMap resize_bilinear(const ProbMap& src, int height, int width);
Image resize_bilinear(const Image& src, int height, int width);
/// Nearest-neighbour resampling for masks.
BinaryMask resize_nearest(const BinaryMask& src, int height, int width);

Image crop(const Image& src, const BoundingBox& box);

inline Shape shape_of(const BinaryMask& m) {
  return {static_cast<int>(m.rows()), static_cast<int>(m.cols())};
}
inline Shape shape_of(const Image& im) { return {im.height(), im.width()}; }

}  // namespace icseg
