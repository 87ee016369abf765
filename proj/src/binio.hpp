// SPDX-License-Identifier: Apache-2.0
//
// Little-endian primitive I/O for the DLDS/DLDC container formats.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "dld/errors.hpp"

namespace dld::binio {

static_assert(std::endian::native == std::endian::little,
              "file formats are little-endian; big-endian hosts need byte swaps");

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
    if (!os) throw IoError("write failed");
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (is.gcount() != static_cast<std::streamsize>(n)) throw IoError("unexpected end of file");
}

template <typename T>
void write_pod(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_bytes(os, &v, sizeof(T));
}

template <typename T>
T read_pod(std::istream& is) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v;
    read_bytes(is, &v, sizeof(T));
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    if (s.size() > 0xFFFF) throw IoError("string too long for u16 length prefix");
    write_pod<std::uint16_t>(os, static_cast<std::uint16_t>(s.size()));
    write_bytes(os, s.data(), s.size());
}

inline std::string read_string(std::istream& is) {
    const auto len = read_pod<std::uint16_t>(is);
    std::string s(len, '\0');
    read_bytes(is, s.data(), len);
    return s;
}

inline void write_f64s(std::ostream& os, const std::vector<double>& v) {
    write_bytes(os, v.data(), v.size() * sizeof(double));
}

inline void read_f64s(std::istream& is, std::vector<double>& v) {
    read_bytes(is, v.data(), v.size() * sizeof(double));
}

inline void expect_magic(std::istream& is, const char (&magic)[5], const std::string& what) {
    char buf[4];
    read_bytes(is, buf, 4);
    if (std::memcmp(buf, magic, 4) != 0)
        throw IoError(what + ": bad magic, not a " + std::string(magic, 4) + " file");
}

}  // namespace dld::binio
