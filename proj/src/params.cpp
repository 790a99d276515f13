#include "icseg/params.hpp"

#include <cstring>
#include <fstream>

namespace icseg {

namespace {

constexpr char kMagic[8] = {'I', 'C', 'S', 'G', 'C', 'K', 'P', '1'};

void put_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                        static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error("checkpoint truncated");
  return b[0] | (b[1] << 8) | (b[2] << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const ParameterStore<float>& store, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint " + path);
  out.write(kMagic, sizeof kMagic);
  put_u32(out, static_cast<std::uint32_t>(store.size()));
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& name = store.name(i);
    const auto& v = store.at(i).value;
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(v.rows()));
    put_u32(out, static_cast<std::uint32_t>(v.cols()));
    for (Eigen::Index k = 0; k < v.size(); ++k) {
      std::uint32_t bits;
      std::memcpy(&bits, v.data() + k, 4);
      put_u32(out, bits);
    }
  }
  if (!out) throw std::runtime_error("failed writing checkpoint " + path);
}

void load_checkpoint(ParameterStore<float>& store, const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kMagic, 8) != 0) throw std::runtime_error(path + ": not a checkpoint");
  const std::uint32_t n = get_u32(in);
  if (n != store.size())
    throw std::runtime_error(path + ": holds " + std::to_string(n) + " parameters, model has " +
                             std::to_string(store.size()));
  for (std::uint32_t i = 0; i < n; ++i) {
    std::string name(get_u32(in), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) throw std::runtime_error("checkpoint truncated");
    const std::uint32_t rows = get_u32(in);
    const std::uint32_t cols = get_u32(in);
    auto& p = store.get(name);
    if (p.value.rows() != rows || p.value.cols() != cols)
      throw std::runtime_error(path + ": shape mismatch for " + name);
    for (Eigen::Index k = 0; k < p.value.size(); ++k) {
      const std::uint32_t bits = get_u32(in);
      std::memcpy(p.value.data() + k, &bits, 4);
    }
  }
}

}  // namespace icseg
