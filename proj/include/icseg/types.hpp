#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace icseg {

/// Dense row-major matrix. Token grids and feature maps are stored as
/// (positions x channels) with positions in raster order.
template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic, Eigen::RowMajor>;

/// Boolean raster, origin top-left, row-major.
using BinaryMask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Per-pixel probability (or any real-valued single channel raster).
using ProbMap = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// RGB image with values in [0,1]. Pixels are stored as an (H*W) x 3 matrix so
/// the image is directly usable as a feature map.
class Image {
 public:
  Image() = default;
  Image(int height, int width);
  Image(int height, int width, Matrix<float> pixels);

  int height() const { return height_; }
  int width() const { return width_; }
  const Matrix<float>& pixels() const { return pixels_; }
  Matrix<float>& pixels() { return pixels_; }

  float operator()(int row, int col, int channel) const {
    return pixels_(static_cast<Eigen::Index>(row) * width_ + col, channel);
  }
  float& operator()(int row, int col, int channel) {
    return pixels_(static_cast<Eigen::Index>(row) * width_ + col, channel);
  }

  /// Throws std::invalid_argument when the size or value invariants fail.
  void validate() const;

 private:
  int height_ = 0;
  int width_ = 0;
  Matrix<float> pixels_;
};

enum class Polarity : std::uint8_t { positive, negative };

struct Click {
  int row = 0;
  int col = 0;
  Polarity polarity = Polarity::positive;
  int order = 0;

  bool positive() const { return polarity == Polarity::positive; }
  friend bool operator==(const Click&, const Click&) = default;
};

using ClickSet = std::vector<Click>;

std::string to_string(Polarity p);
Polarity polarity_from_string(const std::string& s);

/// Appends a click with the next order index.
void push_click(ClickSet& clicks, int row, int col, Polarity polarity);

/// Orders must be unique and contiguous from 0; coordinates inside (height, width).
void validate_clicks(const ClickSet& clicks, int height, int width);

ClickSet positives(const ClickSet& clicks);
ClickSet negatives(const ClickSet& clicks);

struct Shape {
  int height = 0;
  int width = 0;
  friend bool operator==(const Shape&, const Shape&) = default;
};

/// Inclusive-exclusive box: rows [row0, row1), cols [col0, col1).
struct BoundingBox {
  int row0 = 0;
  int col0 = 0;
  int row1 = 0;
  int col1 = 0;
  int height() const { return row1 - row0; }
  int width() const { return col1 - col0; }
  bool empty() const { return row1 <= row0 || col1 <= col0; }
  friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

}  // namespace icseg
