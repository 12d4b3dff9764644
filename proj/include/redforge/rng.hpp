#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>
#include <vector>

namespace redforge {

// Self-contained splitmix64 generator. We avoid <random> distributions on
// purpose: their output is implementation-defined, and reproducibility of
// every artifact from a single seed is a hard contract of this project.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {
        // decorrelate trivially related seeds
        next_u64();
        next_u64();
    }

    std::uint64_t next_u64() {
        std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ull);
        z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
        z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
        return z ^ (z >> 31);
    }

    // uniform integer in [0, n)
    std::uint64_t below(std::uint64_t n) {
        // rejection sampling, unbiased
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
        std::uint64_t v = next_u64();
        while (v >= limit) v = next_u64();
        return v % n;
    }

    // uniform double in [0, 1)
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double gaussian() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    std::vector<double> gaussians(std::size_t n) {
        std::vector<double> out(n);
        for (auto& v : out) v = gaussian();
        return out;
    }

    // Named child stream: independent generator derived from this seed and a
    // label, so components (db, occlusion, init, sphere, ...) can be varied
    // independently without disturbing each other.
    Rng stream(std::string_view name, std::uint64_t index = 0) const {
        std::uint64_t h = 0xCBF29CE484222325ull ^ state_;
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 0x100000001B3ull;
        }
        h ^= index + 0x9E3779B97F4A7C15ull + (h << 6) + (h >> 2);
        return Rng(h);
    }

    std::uint64_t state() const { return state_; }

private:
    std::uint64_t state_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

inline std::uint64_t derive_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0) {
    return Rng(seed).stream(name, index).state();
}

}  // namespace redforge
