#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace pvdm {

using Rng = std::mt19937_64;

/// Derives an independent generator from a base seed and a stream of counters.
inline Rng derive_rng(uint64_t seed, std::initializer_list<uint64_t> stream) {
    std::vector<uint32_t> words{static_cast<uint32_t>(seed), static_cast<uint32_t>(seed >> 32)};
    for (uint64_t s : stream) {
        words.push_back(static_cast<uint32_t>(s));
        words.push_back(static_cast<uint32_t>(s >> 32));
    }
    std::seed_seq seq(words.begin(), words.end());
    return Rng(seq);
}

}  // namespace pvdm
