#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <vector>

namespace vxc {

// splitmix64 step. Used both as the generator core and as a seed mixer so
// that every random draw in the system is a pure function of user seeds.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

// Derive a child seed from a parent seed and up to three stream indices.
// Streams with distinct tags never collide in practice.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0, std::uint64_t c = 0) {
    std::uint64_t s = seed;
    std::uint64_t h = splitmix64(s);
    s ^= a + 0x9e3779b97f4a7c15ull;
    h ^= splitmix64(s);
    s ^= b + 0xc2b2ae3d27d4eb4full;
    h ^= splitmix64(s);
    s ^= c + 0x165667b19e3779f9ull;
    h ^= splitmix64(s);
    return h;
}

// Stream tags for mix_seed. Keeping them in one enum avoids accidental reuse.
enum class Stream : std::uint64_t {
    param_init = 1,
    brain_filters = 2,
    image_pool = 3,
    train_noise = 4,
    test_noise = 5,
    shuffle = 6,
    shift = 7,
    nway_draws = 8,
    bootstrap = 9,
    calibration = 10,
    gradcheck = 11,
};

inline std::uint64_t mix_seed(std::uint64_t seed, Stream s, std::uint64_t b = 0,
                              std::uint64_t c = 0) {
    return mix_seed(seed, static_cast<std::uint64_t>(s), b, c);
}

// Deterministic, platform-independent generator. std:: distributions are
// implementation-defined, so all sampling is hand-rolled here.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [lo, hi] inclusive.
    std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
        const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
        return lo + static_cast<std::int64_t>(next_u64() % span);
    }

    // Standard normal via Box-Muller; two uniforms per draw, no cached spare.
    double normal() {
        double u1 = uniform();
        const double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586476925287 * u2);
    }

    // Fisher-Yates permutation of {0, ..., n-1}.
    std::vector<std::size_t> permutation(std::size_t n) {
        std::vector<std::size_t> p(n);
        for (std::size_t i = 0; i < n; ++i) p[i] = i;
        for (std::size_t i = n; i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
            std::swap(p[i - 1], p[j]);
        }
        return p;
    }

private:
    std::uint64_t state_;
};

// FNV-1a over raw bytes; used for config hashes, image-pool disjointness
// checks and frozen-parameter checksums.
inline std::uint64_t fnv1a64(const void* data, std::size_t n,
                             std::uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

template <class T>
std::uint64_t fnv1a64_span(const T* data, std::size_t n,
                           std::uint64_t h = 0xcbf29ce484222325ull) {
    return fnv1a64(static_cast<const void*>(data), n * sizeof(T), h);
}

}  // namespace vxc
