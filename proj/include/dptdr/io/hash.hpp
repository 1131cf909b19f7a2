#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace dptdr::io {

/// 64-bit FNV-1a.
class Fnv1a {
  public:
    void update(const void* data, std::size_t n)
    {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            m_state ^= p[i];
            m_state *= 0x100000001b3ULL;
        }
    }

    void update(std::string_view s) { update(s.data(), s.size()); }

    std::uint64_t digest() const noexcept { return m_state; }

    std::string hex() const
    {
        char buf[17];
        std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(m_state));
        return buf;
    }

  private:
    std::uint64_t m_state = 0xcbf29ce484222325ULL;
};

inline std::string fnv1a_hex(std::string_view s)
{
    Fnv1a h;
    h.update(s);
    return h.hex();
}

}  // namespace dptdr::io
