#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace whalesift {

using Rng = std::mt19937_64;

/// Expands one top-level seed into independent per-stage seeds. The label
/// names the stage ("init", "fold/3", "interval/vid_0007", ...).
constexpr std::uint64_t derive_seed(std::uint64_t root, std::string_view label) noexcept {
    std::uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a
    for (char c : label) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    // splitmix64 finalizer
    std::uint64_t z = root ^ h;
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t root, std::string_view label) {
    return Rng{derive_seed(root, label)};
}

}  // namespace whalesift
