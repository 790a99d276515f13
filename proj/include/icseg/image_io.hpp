#pragma once

#include <stdexcept>
#include <string>

#include "icseg/types.hpp"

namespace icseg {

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Decodes PNG or JPEG bytes (detected by signature) into an RGB image in [0,1].
Image decode_image(const std::string& bytes);
Image read_image(const std::string& path);

std::string encode_png(const Image& image);
void write_png(const Image& image, const std::string& path);

std::string read_file(const std::string& path);
void write_file(const std::string& path, const std::string& bytes);

}  // namespace icseg
