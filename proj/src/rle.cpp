#include "icseg/rle.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <stdexcept>

#include <openssl/evp.h>

namespace icseg {

std::uint64_t Rle::area() const {
  std::uint64_t a = 0;
  for (std::size_t i = 1; i < counts.size(); i += 2) a += counts[i];
  return a;
}

Rle rle_encode(const BinaryMask& mask) {
  Rle out{static_cast<int>(mask.rows()), static_cast<int>(mask.cols()), {}};
  bool current = false;
  std::uint32_t run = 0;
  for (Eigen::Index c = 0; c < mask.cols(); ++c)
    for (Eigen::Index r = 0; r < mask.rows(); ++r) {
      if (mask(r, c) != current) {
        out.counts.push_back(run);
        run = 0;
        current = !current;
      }
      ++run;
    }
  out.counts.push_back(run);
  return out;
}

BinaryMask rle_decode(const Rle& rle) {
  BinaryMask mask = BinaryMask::Constant(rle.height, rle.width, false);
  const std::uint64_t total = static_cast<std::uint64_t>(rle.height) * rle.width;
  std::uint64_t pos = 0;
  bool value = false;
  for (const auto run : rle.counts) {
    if (pos + run > total) throw std::invalid_argument("RLE counts exceed mask size");
    if (value)
      for (std::uint64_t i = pos; i < pos + run; ++i) mask(i % rle.height, i / rle.height) = true;
    pos += run;
    value = !value;
  }
  if (pos != total) throw std::invalid_argument("RLE counts do not cover the mask");
  return mask;
}

std::string rle_to_string(const Rle& rle) {
  std::string s;
  const auto& cnts = rle.counts;
  for (std::size_t i = 0; i < cnts.size(); ++i) {
    long x = static_cast<long>(cnts[i]);
    if (i > 2) x -= static_cast<long>(cnts[i - 2]);
    bool more = true;
    while (more) {
      char c = static_cast<char>(x & 0x1f);
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

Rle rle_from_string(const std::string& s, int height, int width) {
  Rle out{height, width, {}};
  std::size_t p = 0;
  while (p < s.size()) {
    long x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) throw std::invalid_argument("truncated compressed RLE string");
      const long c = static_cast<long>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= -1L << (5 * k);
    }
    if (out.counts.size() > 2) x += static_cast<long>(out.counts[out.counts.size() - 2]);
    if (x < 0) throw std::invalid_argument("negative run in compressed RLE string");
    out.counts.push_back(static_cast<std::uint32_t>(x));
  }
  return out;
}

Rle rle_from_polygon(const std::vector<double>& xy, int h, int w) {
  const std::size_t k = xy.size() / 2;
  if (k == 0) return Rle{h, w, {static_cast<std::uint32_t>(h * w)}};
  const double scale = 5.0;
  std::vector<int> x(k + 1), y(k + 1);
  for (std::size_t j = 0; j < k; ++j) x[j] = static_cast<int>(scale * xy[j * 2 + 0] + .5);
  x[k] = x[0];
  for (std::size_t j = 0; j < k; ++j) y[j] = static_cast<int>(scale * xy[j * 2 + 1] + .5);
  y[k] = y[0];
  std::vector<int> u, v;
  for (std::size_t j = 0; j < k; ++j) {
    int xs = x[j], xe = x[j + 1], ys = y[j], ye = y[j + 1];
    const int dx = std::abs(xe - xs);
    const int dy = std::abs(ys - ye);
    const bool flip = (dx >= dy && xs > xe) || (dx < dy && ys > ye);
    if (flip) {
      std::swap(xs, xe);
      std::swap(ys, ye);
    }
    const double s = dx >= dy ? static_cast<double>(ye - ys) / dx : static_cast<double>(xe - xs) / dy;
    if (dx >= dy) {
      for (int d = 0; d <= dx; ++d) {
        const int t = flip ? dx - d : d;
        u.push_back(t + xs);
        v.push_back(static_cast<int>(ys + s * t + .5));
      }
    } else {
      for (int d = 0; d <= dy; ++d) {
        const int t = flip ? dy - d : d;
        v.push_back(t + ys);
        u.push_back(static_cast<int>(xs + s * t + .5));
      }
    }
  }
  // y-boundary crossings, downsampled back to the pixel grid
  std::vector<int> bx, by;
  for (std::size_t j = 1; j < u.size(); ++j) {
    if (u[j] == u[j - 1]) continue;
    double xd = static_cast<double>(u[j] < u[j - 1] ? u[j] : u[j] - 1);
    xd = (xd + .5) / scale - .5;
    if (std::floor(xd) != xd || xd < 0 || xd > w - 1) continue;
    double yd = static_cast<double>(v[j] < v[j - 1] ? v[j] : v[j - 1]);
    yd = (yd + .5) / scale - .5;
    if (yd < 0)
      yd = 0;
    else if (yd > h)
      yd = h;
    yd = std::ceil(yd);
    bx.push_back(static_cast<int>(xd));
    by.push_back(static_cast<int>(yd));
  }
  std::vector<std::uint32_t> a;
  a.reserve(bx.size() + 1);
  for (std::size_t j = 0; j < bx.size(); ++j) a.push_back(static_cast<std::uint32_t>(bx[j] * h + by[j]));
  a.push_back(static_cast<std::uint32_t>(h * w));
  std::sort(a.begin(), a.end());
  std::uint32_t p = 0;
  for (auto& t : a) {
    const std::uint32_t cur = t;
    t -= p;
    p = cur;
  }
  std::vector<std::uint32_t> b;
  std::size_t j = 0;
  b.push_back(a[j++]);
  while (j < a.size()) {
    if (a[j] > 0) {
      b.push_back(a[j++]);
    } else {
      ++j;
      if (j < a.size()) b.back() += a[j++];
    }
  }
  return Rle{h, w, std::move(b)};
}

Rle rle_merge(const std::vector<Rle>& parts) {
  if (parts.empty()) throw std::invalid_argument("rle_merge needs at least one part");
  BinaryMask acc = rle_decode(parts.front());
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const BinaryMask m = rle_decode(parts[i]);
    if (m.rows() != acc.rows() || m.cols() != acc.cols()) throw std::invalid_argument("rle_merge: shape mismatch");
    acc = acc || m;
  }
  return rle_encode(acc);
}

std::string base64_encode(const std::string& bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(const std::string& text) {
  if (text.size() % 4 != 0) throw std::invalid_argument("base64 text length must be a multiple of 4");
  std::string out(3 * text.size() / 4, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) throw std::invalid_argument("invalid base64 text");
  std::size_t len = static_cast<std::size_t>(n);
  // EVP_DecodeBlock keeps the bytes produced by '=' padding
  if (!text.empty() && text.back() == '=') --len;
  if (text.size() >= 2 && text[text.size() - 2] == '=') --len;
  out.resize(len);
  return out;
}

std::string rle_counts_base64(const Rle& rle) {
  std::string bytes;
  bytes.reserve(rle.counts.size() * 4);
  for (const auto c : rle.counts)
    for (int b = 0; b < 4; ++b) bytes.push_back(static_cast<char>((c >> (8 * b)) & 0xff));
  return base64_encode(bytes);
}

Rle rle_from_base64(const std::string& b64, int height, int width) {
  const std::string bytes = base64_decode(b64);
  if (bytes.size() % 4 != 0) throw std::invalid_argument("RLE payload is not a whole number of uint32 counts");
  Rle out{height, width, {}};
  for (std::size_t i = 0; i < bytes.size(); i += 4) {
    std::uint32_t c = 0;
    for (int b = 0; b < 4; ++b) c |= static_cast<std::uint32_t>(static_cast<unsigned char>(bytes[i + b])) << (8 * b);
    out.counts.push_back(c);
  }
  return out;
}

}  // namespace icseg
