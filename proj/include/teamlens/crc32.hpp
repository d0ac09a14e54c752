#pragma once

#include <array>
#include <cstddef>
#include <cstdint>

namespace teamlens {

// CRC-32 (IEEE 802.3, reflected, poly 0xEDB88320) used as the payload
// checksum in the binary file formats.

namespace detail {
inline const std::array<std::uint32_t, 256>& crc32_table() {
    static const std::array<std::uint32_t, 256> table = [] {
        std::array<std::uint32_t, 256> t{};
        for (std::uint32_t i = 0; i < 256; ++i) {
            std::uint32_t c = i;
            for (int k = 0; k < 8; ++k)
                c = (c & 1) ? 0xEDB88320u ^ (c >> 1) : (c >> 1);
            t[i] = c;
        }
        return t;
    }();
    return table;
}
} // namespace detail

inline std::uint32_t crc32(const void* buf, std::size_t len, std::uint32_t seed = 0) {
    const auto* p = static_cast<const unsigned char*>(buf);
    std::uint32_t c = seed ^ 0xFFFFFFFFu;
    const auto& table = detail::crc32_table();
    for (std::size_t i = 0; i < len; ++i)
        c = table[(c ^ p[i]) & 0xFFu] ^ (c >> 8);
    return c ^ 0xFFFFFFFFu;
}

} // namespace teamlens
