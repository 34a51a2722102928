#include "pf/io.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace pf {

namespace {

void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

void read_bytes(std::istream& is, void* p, std::size_t n, const std::string& what) {
    std::streampos pos = is.tellg();
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is.gcount()) != n)
        throw std::runtime_error(what + ": truncated at byte offset " +
                                 std::to_string(static_cast<long long>(pos)));
}

}  // namespace

void write_u32(std::ostream& os, std::uint32_t v) {
    unsigned char b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    write_bytes(os, b, 4);
}

void write_u64(std::ostream& os, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    write_bytes(os, b, 8);
}

std::uint32_t read_u32(std::istream& is, const std::string& what) {
    unsigned char b[4];
    read_bytes(is, b, 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
}

std::uint64_t read_u64(std::istream& is, const std::string& what) {
    unsigned char b[8];
    read_bytes(is, b, 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void read_magic(std::istream& is, const char expect[4], const std::string& what) {
    std::streampos pos = is.tellg();
    char got[4];
    read_bytes(is, got, 4, what);
    if (std::memcmp(got, expect, 4) != 0)
        throw std::runtime_error(what + ": bad magic at byte offset " +
                                 std::to_string(static_cast<long long>(pos)) +
                                 " (expected \"" + std::string(expect, 4) + "\")");
}

std::string at_offset(std::istream& is) {
    return std::to_string(static_cast<long long>(is.tellg()));
}

void write_tensor(std::ostream& os, const Tensor& t) {
    write_bytes(os, "PFT1", 4);
    unsigned char dtype = 1;  // f32
    write_bytes(os, &dtype, 1);
    write_u32(os, static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape) write_u64(os, d);
    // f32 little-endian payload; host is little-endian (asserted in save_tensor).
    write_bytes(os, t.data.data(), t.data.size() * sizeof(float));
}

Tensor read_tensor(std::istream& is) {
    read_magic(is, "PFT1", "tensor");
    unsigned char dtype;
    read_bytes(is, &dtype, 1, "tensor dtype");
    if (dtype != 1)
        throw std::runtime_error("tensor: unsupported dtype code " + std::to_string(dtype));
    std::uint32_t rank = read_u32(is, "tensor rank");
    if (rank > 8) throw std::runtime_error("tensor: rank " + std::to_string(rank) + " too large");
    std::vector<std::size_t> shape(rank);
    for (std::uint32_t i = 0; i < rank; ++i)
        shape[i] = static_cast<std::size_t>(read_u64(is, "tensor dims"));
    Tensor t(shape);
    read_bytes(is, t.data.data(), t.data.size() * sizeof(float), "tensor payload");
    return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
    static_assert(sizeof(float) == 4);
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    write_tensor(os, t);
    if (!os) throw std::runtime_error("write failed: " + path);
}

Tensor load_tensor(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    return read_tensor(is);
}

}  // namespace pf
