#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "dptdr/error.hpp"

namespace dptdr::io {

/// Little-endian scalar writer, independent of host byte order.
template <typename T>
void write_le(std::ostream& out, T value)
{
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes{};
    std::memcpy(bytes.data(), &value, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    out.write(bytes.data(), sizeof(T));
}

template <typename T>
T read_le(std::istream& in)
{
    static_assert(std::is_trivially_copyable_v<T>);
    std::array<char, sizeof(T)> bytes{};
    if (!in.read(bytes.data(), sizeof(T))) {
        throw IoError("unexpected end of file");
    }
    if constexpr (std::endian::native == std::endian::big) {
        std::reverse(bytes.begin(), bytes.end());
    }
    T value;
    std::memcpy(&value, bytes.data(), sizeof(T));
    return value;
}

inline void write_string(std::ostream& out, const std::string& s)
{
    write_le<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in, std::size_t max_len = 1U << 20)
{
    const auto n = read_le<std::uint32_t>(in);
    if (n > max_len) {
        throw IoError("string length " + std::to_string(n) + " exceeds limit");
    }
    std::string s(n, '\0');
    if (n > 0 && !in.read(s.data(), n)) {
        throw IoError("unexpected end of file");
    }
    return s;
}

}  // namespace dptdr::io
