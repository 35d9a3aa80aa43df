#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

namespace promptleak {

/// 64-bit FNV-1a. Stable across platforms and runs, which std::hash is not;
/// used for seeds and config digests, never for anything security related.
constexpr std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 0xcbf29ce484222325ULL) {
    std::uint64_t h = seed;
    for (char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

/// Maps a 64-bit draw to [0, 1) using its top 53 bits.
constexpr double unit_interval(std::uint64_t draw) { return static_cast<double>(draw >> 11) * 0x1.0p-53; }

} // namespace promptleak
