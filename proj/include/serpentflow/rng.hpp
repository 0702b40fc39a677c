#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

namespace serpentflow::numerics {

// Deterministic counter-based generator (splitmix64). Every stochastic
// component in the project draws from one of these, seeded explicitly, so
// that reruns with the same seeds are bit-identical.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Standard normal via Box-Muller; the second value of each pair is cached.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return r * std::cos(a);
    }

    // Fisher-Yates permutation of {0, ..., n-1}.
    template <typename Index>
    void shuffle(std::vector<Index>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = static_cast<std::size_t>(next_u64() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

// Stable seed derivation for independent substreams (FNV-1a over the tag,
// mixed with the base seed through one splitmix64 round).
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag) {
    std::uint64_t h = 0xCBF29CE484222325ull;
    for (const char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    Rng mix(base ^ h);
    return mix.next_u64();
}

inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    Rng mix(base ^ (0x9E3779B97F4A7C15ull + index * 0xD1B54A32D192ED03ull));
    return mix.next_u64();
}

} // namespace serpentflow::numerics
