#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace poisonlab {

// SplitMix64 stream. Every piece of randomness in the project flows through
// this generator so runs are reproducible from the seeds recorded in the
// config echo. Distribution transforms are hand-rolled: the standard library
// distributions are not bit-stable across implementations.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next_u64() {
        state_ += 0x9E3779B97F4A7C15ull;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // Uniform in [0, 1), 24 bits of mantissa.
    float next_float() { return static_cast<float>(next_u64() >> 40) * 0x1.0p-24f; }

    // Uniform in [0, 1), 53 bits.
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    float uniform(float lo, float hi) { return lo + (hi - lo) * next_float(); }

    // Unbiased integer in [0, n) by rejection.
    uint64_t next_below(uint64_t n) {
        if (n == 0) return 0;
        const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // Box-Muller; consumes two uniforms per pair.
    float next_gaussian() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1 = next_double();
        double u2 = next_double();
        while (u1 <= 1e-300) u1 = next_double();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = static_cast<float>(r * std::sin(a));
        have_spare_ = true;
        return static_cast<float>(r * std::cos(a));
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            const size_t j = static_cast<size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    uint64_t state_;
    float spare_ = 0.0f;
    bool have_spare_ = false;
};

// Derives an independent named stream from a master seed. FNV-1a over the tag
// keeps the derivation platform-independent.
inline uint64_t derive_seed(uint64_t master, std::string_view tag) {
    uint64_t h = 0xCBF29CE484222325ull;
    for (const char c : tag) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001B3ull;
    }
    SplitMix64 mix(master ^ h);
    return mix.next_u64();
}

inline uint64_t derive_seed(uint64_t master, std::string_view tag, uint64_t index) {
    SplitMix64 mix(derive_seed(master, tag) ^ (0x9E3779B97F4A7C15ull * (index + 1)));
    return mix.next_u64();
}

}  // namespace poisonlab
