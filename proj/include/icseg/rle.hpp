#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icseg/types.hpp"

namespace icseg {

/// COCO-style uncompressed run-length encoding: column-major scan, runs
/// alternate background/foreground starting with background (a leading 0 run
/// when the first pixel is foreground).
struct Rle {
  int height = 0;
  int width = 0;
  std::vector<std::uint32_t> counts;

  std::uint64_t area() const;
  friend bool operator==(const Rle&, const Rle&) = default;
};

Rle rle_encode(const BinaryMask& mask);
BinaryMask rle_decode(const Rle& rle);

/// COCO compressed counts string (LEB128-like, as produced by pycocotools).
std::string rle_to_string(const Rle& rle);
Rle rle_from_string(const std::string& s, int height, int width);

/// Rasterizes one polygon [x0,y0,x1,y1,...] exactly like pycocotools' frPoly.
Rle rle_from_polygon(const std::vector<double>& xy, int height, int width);

/// Pixelwise union.
Rle rle_merge(const std::vector<Rle>& parts);

/// Wire format used by the service: little-endian uint32 counts, base64.
std::string rle_counts_base64(const Rle& rle);
Rle rle_from_base64(const std::string& b64, int height, int width);

std::string base64_encode(const std::string& bytes);
std::string base64_decode(const std::string& text);

}  // namespace icseg
