#pragma once

#include <vector>

#include "icseg/types.hpp"

namespace icseg {

using LabelMap = Eigen::Array<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct Components {
  LabelMap labels;         ///< 0 = background, 1..count = component id
  std::vector<int> areas;  ///< areas[id - 1]
  int count() const { return static_cast<int>(areas.size()); }
  BinaryMask component(int id) const { return labels == id; }
};

/// 4-connected labelling, ids assigned in raster order of each component's first pixel.
Components connected_components(const BinaryMask& mask);

/// Erosion by a 3x3 square. Pixels outside the raster count as background.
BinaryMask erode3x3(const BinaryMask& mask);

/// Euclidean distance from every set pixel to the nearest unset pixel, where
/// the ring just outside the raster counts as unset. Unset pixels get 0.
Eigen::ArrayXXd distance_to_boundary(const BinaryMask& mask);

/// Euclidean distance from every pixel to the nearest set pixel (0 on set
/// pixels, +inf everywhere when the mask is empty).
Eigen::ArrayXXd distance_to_mask(const BinaryMask& mask);

}  // namespace icseg
