#pragma once

#include <bit>
#include <cstring>
#include <fstream>

#include "prcl/common.hpp"

namespace prcl {

struct ParseError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts unsupported");

template <typename T>
void write(std::ostream& os, T value) {
    os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T read(std::istream& is, const char* what) {
    T value;
    is.read(reinterpret_cast<char*>(&value), sizeof(T));
    if (!is) throw ParseError(std::string("truncated file while reading ") + what +
                              " at offset " + std::to_string(is.tellg()));
    return value;
}

inline void write_bytes(std::ostream& os, const void* data, std::size_t n) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* data, std::size_t n, const char* what) {
    is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(n));
    if (!is) throw ParseError(std::string("truncated file while reading ") + what);
}

inline void write_magic(std::ostream& os, const char magic[8]) { write_bytes(os, magic, 8); }

inline void expect_magic(std::istream& is, const char magic[8], const char* what) {
    char buf[8];
    read_bytes(is, buf, 8, what);
    if (std::memcmp(buf, magic, 8) != 0)
        throw ParseError(std::string("bad magic, not a ") + what + " file");
}

}  // namespace binio
}  // namespace prcl
