#pragma once

#include <cstdint>
#include <random>

namespace armr {

/// Generator used for every random draw in the library.
using Rng = std::mt19937_64;

/// Recorded in run metadata next to the seed.
inline constexpr const char* kGeneratorName = "mt19937_64+std::normal_distribution(libstdc++)";

/// SplitMix64 finalizer.
[[nodiscard]] constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

/// Derived seed for sub-task `index` of a run seeded with `base`:
/// splitmix64(base + (index + 1) * 0x9E3779B97F4A7C15).
[[nodiscard]] constexpr std::uint64_t mix_seed(std::uint64_t base, std::uint64_t index) noexcept {
    return splitmix64(base + (index + 1) * 0x9E3779B97F4A7C15ULL);
}

}  // namespace armr
