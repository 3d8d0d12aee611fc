#pragma once

// Little-endian scalar I/O shared by the binary file formats.

#include <bit>
#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "groundrl/errors.hpp"

namespace groundrl::binio {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

template <typename T>
void put(std::ostream& out, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
    static_assert(std::is_trivially_copyable_v<T>);
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof(T));
    if (!in) throw IoError("unexpected end of file");
    return v;
}

inline void put_fixed(std::ostream& out, const std::string& s, std::size_t width) {
    if (s.size() > width) throw IoError("string too long for fixed field: '" + s + "'");
    std::string buf = s;
    buf.resize(width, '\0');
    out.write(buf.data(), static_cast<std::streamsize>(width));
}

inline std::string get_fixed(std::istream& in, std::size_t width) {
    std::string buf(width, '\0');
    in.read(buf.data(), static_cast<std::streamsize>(width));
    if (!in) throw IoError("unexpected end of file");
    buf.resize(buf.find('\0') == std::string::npos ? width : buf.find('\0'));
    return buf;
}

}  // namespace groundrl::binio
