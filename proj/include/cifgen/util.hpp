#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cifgen {

/// 64-bit FNV-1a over raw bytes. Stable across platforms; used for content
/// ids of canonical CIF text, vocabulary stamps and checkpoint headers.
constexpr std::uint64_t fnv1a64(std::string_view bytes) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string to_hex(std::uint64_t value);

/// Fixed-point rendering with exactly `decimals` digits after the point.
/// Negative zero is rendered without a sign.
std::string format_fixed(double value, int decimals);

/// Rounds half away from zero to `decimals` places.
double round_to(double value, int decimals) noexcept;

/// SplitMix64 step; derives independent seeds from one master seed.
constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) noexcept {
    return splitmix64(master ^ splitmix64(stream + 0x632be59bd9b4e019ULL));
}

}  // namespace cifgen
