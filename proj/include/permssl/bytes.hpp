#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>

#include "permssl/error.hpp"

namespace permssl::detail {

static_assert(sizeof(float) == 4, "file formats require 32-bit IEEE floats");

constexpr uint16_t bswap(uint16_t v) { return static_cast<uint16_t>((v >> 8) | (v << 8)); }
constexpr uint32_t bswap(uint32_t v) {
    return (v >> 24) | ((v >> 8) & 0xff00u) | ((v << 8) & 0xff0000u) | (v << 24);
}

inline void append_bytes(std::string& out, const void* src, size_t n) {
    out.append(static_cast<const char*>(src), n);
}

inline void append_u32(std::string& out, uint32_t v) {
    if constexpr (std::endian::native != std::endian::little) v = bswap(v);
    append_bytes(out, &v, 4);
}

inline void append_u16(std::string& out, uint16_t v) {
    if constexpr (std::endian::native != std::endian::little) v = bswap(v);
    append_bytes(out, &v, 2);
}

inline void append_f32(std::string& out, float v) {
    uint32_t bits;
    std::memcpy(&bits, &v, 4);
    append_u32(out, bits);
}

inline void append_f32_block(std::string& out, const float* src, size_t n) {
    if constexpr (std::endian::native == std::endian::little) {
        append_bytes(out, src, n * 4);
    } else {
        for (size_t i = 0; i < n; ++i) append_f32(out, src[i]);
    }
}

// Cursor over an in-memory file image; every read checks bounds and reports
// the byte offset of the first missing or malformed byte.
struct ByteReader {
    const std::string& buf;
    uint64_t pos = 0;

    void need(uint64_t n, const char* what) const {
        if (pos + n > buf.size())
            throw FormatError(std::string("truncated file: expected ") + what, pos);
    }
    uint32_t read_u32(const char* what) {
        need(4, what);
        uint32_t v;
        std::memcpy(&v, buf.data() + pos, 4);
        if constexpr (std::endian::native != std::endian::little) v = bswap(v);
        pos += 4;
        return v;
    }
    uint16_t read_u16(const char* what) {
        need(2, what);
        uint16_t v;
        std::memcpy(&v, buf.data() + pos, 2);
        if constexpr (std::endian::native != std::endian::little) v = bswap(v);
        pos += 2;
        return v;
    }
    float read_f32(const char* what) {
        uint32_t bits = read_u32(what);
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    void read_f32_block(float* dst, size_t n, const char* what) {
        need(n * 4, what);
        if constexpr (std::endian::native == std::endian::little) {
            std::memcpy(dst, buf.data() + pos, n * 4);
            pos += n * 4;
        } else {
            for (size_t i = 0; i < n; ++i) dst[i] = read_f32(what);
        }
    }
};

inline std::string slurp_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw std::runtime_error("read failure: " + path);
    return buf;
}

} // namespace permssl::detail
