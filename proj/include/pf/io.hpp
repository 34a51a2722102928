#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>

#include "pf/tensor.hpp"

namespace pf {

// "PFT1" tensor container: magic, u8 dtype (1 = f32), u32 rank, u64 dims,
// then the raw row-major f32 payload. All integers little-endian.
// The stream overloads let model/patch files embed tensor blocks.

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

// Little-endian primitives shared by the model/patch formats.
void write_u32(std::ostream& os, std::uint32_t v);
void write_u64(std::ostream& os, std::uint64_t v);
std::uint32_t read_u32(std::istream& is, const std::string& what);
std::uint64_t read_u64(std::istream& is, const std::string& what);
void read_magic(std::istream& is, const char expect[4], const std::string& what);

// Byte offset of the stream position, for positioned error messages.
std::string at_offset(std::istream& is);

}  // namespace pf
