#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace gazereg {

// All randomness in a run funnels through one master seed. Independent
// subsystems draw from independent streams derived as
//   stream_seed = splitmix64(master_seed XOR stream_id * 0x9E3779B97F4A7C15)
// so changing e.g. the shuffle stream consumption never perturbs init.

enum class RngStream : std::uint64_t {
    Init = 1,         // parameter initialization
    Shuffle = 2,      // minibatch shuffling
    Dropout = 3,      // dropout masks
    SplitShuffle = 4, // train/val split membership
    Synth = 5,        // synthetic data generation
};

inline std::uint64_t splitmix64(std::uint64_t& state) {
    state += 0x9E3779B97F4A7C15ULL;
    std::uint64_t z = state;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_stream_seed(std::uint64_t master_seed, RngStream stream) {
    std::uint64_t state = master_seed ^ (static_cast<std::uint64_t>(stream) * 0x9E3779B97F4A7C15ULL);
    return splitmix64(state);
}

inline std::mt19937_64 make_rng(std::uint64_t master_seed, RngStream stream) {
    return std::mt19937_64(derive_stream_seed(master_seed, stream));
}

// Portable uniform in [0, 1): top 53 bits of the generator output, so draws
// are identical across standard library implementations.
inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Fisher-Yates with an explicit step sequence, so membership is identical
// across standard library implementations.
template <typename T>
void deterministic_shuffle(std::vector<T>& items, std::mt19937_64& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const std::size_t j = static_cast<std::size_t>(rng() % i);
        std::swap(items[i - 1], items[j]);
    }
}

} // namespace gazereg
