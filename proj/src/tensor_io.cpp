#include "laver/tensor_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace laver {
namespace detail {
namespace {

template <typename T>
void write_le(std::ostream& os, T v) {
  std::array<char, sizeof(T)> buf;
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  os.write(buf.data(), buf.size());
}

template <typename T>
T read_le(std::istream& is) {
  std::array<unsigned char, sizeof(T)> buf;
  if (!is.read(reinterpret_cast<char*>(buf.data()), buf.size())) {
    throw std::runtime_error("LVTD: unexpected end of stream");
  }
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(buf[i]) << (8 * i);
  return v;
}

}  // namespace

void write_u16(std::ostream& os, std::uint16_t v) { write_le(os, v); }
void write_u32(std::ostream& os, std::uint32_t v) { write_le(os, v); }
void write_u64(std::ostream& os, std::uint64_t v) { write_le(os, v); }
std::uint16_t read_u16(std::istream& is) { return read_le<std::uint16_t>(is); }
std::uint32_t read_u32(std::istream& is) { return read_le<std::uint32_t>(is); }
std::uint64_t read_u64(std::istream& is) { return read_le<std::uint64_t>(is); }

}  // namespace detail

void write_lvtd(std::ostream& os, const Tensor& t) {
  os.write("LVTD", 4);
  detail::write_u16(os, kLvtdVersion);
  detail::write_u16(os, static_cast<std::uint16_t>(t.rank()));
  for (auto e : t.shape()) detail::write_u64(os, e);
  for (float v : t.values()) detail::write_u32(os, std::bit_cast<std::uint32_t>(v));
  if (!os) throw std::runtime_error("LVTD: write failed");
}

Tensor read_lvtd(std::istream& is) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, "LVTD", 4) != 0) {
    throw std::runtime_error("LVTD: bad magic");
  }
  const auto version = detail::read_u16(is);
  if (version != kLvtdVersion) {
    throw std::runtime_error("LVTD: unsupported version " + std::to_string(version));
  }
  const auto rank = detail::read_u16(is);
  std::vector<std::size_t> shape(rank);
  std::size_t count = 1;
  for (auto& e : shape) {
    e = static_cast<std::size_t>(detail::read_u64(is));
    count *= e;
  }
  if (count > (std::size_t{1} << 32)) throw std::runtime_error("LVTD: tensor too large");
  std::vector<float> data(count);
  for (auto& v : data) v = std::bit_cast<float>(detail::read_u32(is));
  return Tensor(std::move(shape), std::move(data));
}

void save_lvtd(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_lvtd(os, t);
}

Tensor load_lvtd(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_lvtd(is);
}

}  // namespace laver
