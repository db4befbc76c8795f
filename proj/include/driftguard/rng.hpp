#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "driftguard/common.hpp"

namespace driftguard {

// Deterministic RNG. mt19937_64 output is pinned by the standard; all
// distributions are derived here by hand so streams are bit-identical
// across platforms (std:: distributions are implementation-defined).
class Rng {
  public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t next_u64() { return eng_(); }

    // Uniform in [0, 1), 53-bit resolution.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), rejection-sampled so every value is equally likely.
    int64_t uniform_int(int64_t n) {
        if (n <= 0) throw std::invalid_argument("Rng::uniform_int: n must be positive");
        uint64_t un = static_cast<uint64_t>(n);
        uint64_t rem = (std::numeric_limits<uint64_t>::max() % un + 1) % un;  // 2^64 mod n
        uint64_t limit = std::numeric_limits<uint64_t>::max() - rem + 1;      // 0 means no rejection
        uint64_t x;
        do {
            x = next_u64();
        } while (limit != 0 && x >= limit);
        return static_cast<int64_t>(x % un);
    }

    // Standard normal via Box-Muller (cached spare).
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;  // (0, 1]
        double u2 = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;        // [0, 1)
        double r = std::sqrt(-2.0 * std::log(u1));
        double t = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(t);
        has_spare_ = true;
        return r * std::cos(t);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(uniform_int(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

  private:
    std::mt19937_64 eng_;
    bool has_spare_ = false;
    double spare_ = 0.0;
};

// Keyed substream derivation: a master seed plus a stream name and up to two
// indices give an independent seed. Adding streams never perturbs others.
inline uint64_t derive_seed(uint64_t master, std::string_view stream, uint64_t a = 0, uint64_t b = 0) {
    return mix64(mix64(mix64(master ^ fnv1a(stream)) ^ a) ^ b);
}

inline Rng substream(uint64_t master, std::string_view stream, uint64_t a = 0, uint64_t b = 0) {
    return Rng(derive_seed(master, stream, a, b));
}

}  // namespace driftguard
