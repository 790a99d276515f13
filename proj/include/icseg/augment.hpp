#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "icseg/types.hpp"

namespace icseg {

struct AugmentConfig {
  bool flip = true;
  bool rotate = true;
  double max_rotation_deg = 15.0;
  bool scale = true;
  double min_scale = 0.75;
  double max_scale = 1.25;
  /// Random shift of the output window (a crop when zoomed in).
  bool crop = true;

  static AugmentConfig none() { return {false, false, 15.0, false, 0.75, 1.25, false}; }
};

/// Geometric map from source to output pixel coordinates (continuous, pixel
/// centres at +0.5): x_out = s * R(theta) * (flip(x) - c) + c + t, output size
/// equal to the source size.
struct GeometricTransform {
  int height = 0;
  int width = 0;
  bool flip = false;
  double angle = 0.0;  ///< radians
  double scale = 1.0;
  double shift_row = 0.0;
  double shift_col = 0.0;

  bool identity() const { return !flip && angle == 0.0 && scale == 1.0 && shift_row == 0.0 && shift_col == 0.0; }
  /// Source coordinates of an output point.
  void inverse(double row, double col, double* src_row, double* src_col) const;
  void forward(double row, double col, double* out_row, double* out_col) const;
};

GeometricTransform sample_transform(int height, int width, const AugmentConfig& cfg, std::uint64_t seed);

/// Bilinear resampling; outside the source the nearest edge pixel is used.
Image apply_transform(const GeometricTransform& t, const Image& image);
/// Nearest-neighbour resampling; outside the source is background.
BinaryMask apply_transform(const GeometricTransform& t, const BinaryMask& mask);
/// Maps a click to the output pixel whose source pixel is the click's pixel.
/// std::nullopt when the click leaves the image or no output pixel samples
/// it (the caller re-simulates).
std::optional<Click> apply_transform(const GeometricTransform& t, const Click& click);

struct AugmentedSample {
  Image image;
  std::vector<BinaryMask> masks;
  ClickSet clicks;        ///< clicks that survived, orders renumbered
  int dropped_clicks = 0;
  GeometricTransform transform;
};

AugmentedSample augment(const Image& image, const std::vector<BinaryMask>& masks, const ClickSet& clicks,
                        const AugmentConfig& cfg, std::uint64_t seed);

}  // namespace icseg
