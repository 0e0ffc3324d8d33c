#pragma once

#include <filesystem>
#include <iosfwd>

#include "laver/tensor.hpp"

namespace laver {

// LVTD layout, all little-endian:
//   "LVTD" | u16 version | u16 rank | u64 extent × rank | f32 × product(extents)
inline constexpr std::uint16_t kLvtdVersion = 1;

void write_lvtd(std::ostream& os, const Tensor& t);
Tensor read_lvtd(std::istream& is);

void save_lvtd(const std::filesystem::path& path, const Tensor& t);
Tensor load_lvtd(const std::filesystem::path& path);

namespace detail {
void write_u16(std::ostream& os, std::uint16_t v);
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint16_t read_u16(std::istream& is);
std::uint32_t read_u32(std::istream& is);
std::uint64_t read_u64(std::istream& is);
}  // namespace detail

}  // namespace laver
