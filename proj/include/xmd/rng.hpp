#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string_view>
#include <vector>

namespace xmd {

/// FNV-1a 64-bit hash; used to turn purpose labels into substream keys and to
/// fingerprint canonical config text in CSV headers.
constexpr std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 1469598103934665603ull;
    for (char c : s) {
        h ^= static_cast<unsigned char>(c);
        h *= 1099511628211ull;
    }
    return h;
}

/// Deterministic splitmix64 generator. Chosen over std::mt19937 +
/// std::*_distribution because the distributions are implementation-defined:
/// the same seed must produce bit-identical streams on every toolchain.
///
/// Substreams are derived from (master seed, purpose label, index) so that
/// independent consumers (batch labels, noise, init, subsampling, ...) never
/// share or reorder each other's draws.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    static Rng substream(std::uint64_t master, std::string_view purpose, std::uint64_t index = 0) {
        std::uint64_t s = mix(master ^ fnv1a64(purpose));
        s = mix(s ^ (index * 0x9e3779b97f4a7c15ull));
        return Rng(s);
    }

    std::uint64_t next_u64() {
        state_ += 0x9e3779b97f4a7c15ull;
        return mix(state_);
    }

    /// Uniform double in [0, 1) with 53 random bits.
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    /// Unbiased integer in [0, n) (Lemire's multiply-shift with rejection).
    std::uint64_t uniform_index(std::uint64_t n) {
        if (n == 0) throw std::invalid_argument("uniform_index: n must be positive");
        std::uint64_t x = next_u64();
        __uint128_t m = static_cast<__uint128_t>(x) * n;
        auto lo = static_cast<std::uint64_t>(m);
        if (lo < n) {
            const std::uint64_t threshold = (0 - n) % n;
            while (lo < threshold) {
                x = next_u64();
                m = static_cast<__uint128_t>(x) * n;
                lo = static_cast<std::uint64_t>(m);
            }
        }
        return static_cast<std::uint64_t>(m >> 64);
    }

    /// Standard normal via Box-Muller; generates pairs, caches the second.
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform();  // (0, 1], keeps log() finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * std::numbers::pi * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

private:
    static constexpr std::uint64_t mix(std::uint64_t z) {
        z ^= z >> 30;
        z *= 0xbf58476d1ce4e5b9ull;
        z ^= z >> 27;
        z *= 0x94d049bb133111ebull;
        z ^= z >> 31;
        return z;
    }

    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

/// k distinct indices drawn uniformly from [0, n), returned in ascending order.
/// Partial Fisher-Yates over an index array; O(n) memory, deterministic.
inline std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
    if (k > n) throw std::invalid_argument("sample_without_replacement: k exceeds n");
    std::vector<std::size_t> pool(n);
    for (std::size_t i = 0; i < n; ++i) pool[i] = i;
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(n - i));
        std::swap(pool[i], pool[j]);
    }
    pool.resize(k);
    std::sort(pool.begin(), pool.end());
    return pool;
}

}  // namespace xmd
