#include "icseg/exemplar_module.hpp"

#include <algorithm>
#include <cmath>

namespace icseg {

BoundingBox scale_bbox(const BoundingBox& box, double scale, Shape bounds) {
  if (box.empty()) throw std::invalid_argument("scale_bbox: empty box");
  if (!(scale > 0)) throw std::invalid_argument("scale_bbox: scale must be positive");
  const double cr = 0.5 * (box.row0 + box.row1);
  const double cc = 0.5 * (box.col0 + box.col1);
  const int h = std::max(1, static_cast<int>(std::lround(box.height() * scale)));
  const int w = std::max(1, static_cast<int>(std::lround(box.width() * scale)));
  const int r0 = static_cast<int>(std::lround(cr - 0.5 * h));
  const int c0 = static_cast<int>(std::lround(cc - 0.5 * w));
  BoundingBox out{std::max(0, r0), std::max(0, c0), std::min(bounds.height, r0 + h), std::min(bounds.width, c0 + w)};
  if (out.empty()) throw std::logic_error("scale_bbox: clipped box is empty");
  return out;
}

std::vector<ExemplarCrop> crop_exemplar(const Image& image, const BinaryMask& mask, const std::vector<double>& scales) {
  if (mask.rows() != image.height() || mask.cols() != image.width())
    throw std::invalid_argument("crop_exemplar: mask and image shapes differ");
  const BoundingBox tight = tight_bbox(mask);
  if (tight.empty()) throw std::invalid_argument("crop_exemplar: exemplar mask is empty");
  std::vector<ExemplarCrop> out;
  for (double s : scales) {
    const BoundingBox b = scale_bbox(tight, s, shape_of(image));
    out.push_back({crop(image, b), s, b});
  }
  return out;
}

}  // namespace icseg
