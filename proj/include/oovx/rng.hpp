#pragma once

#include <cstdint>
#include <cmath>
#include <string_view>
#include <vector>

// Deterministic, platform-independent random primitives. std::mt19937_64 is
// fully specified by the standard; the distributions here are hand-rolled
// because the std:: distribution objects are implementation-defined.

namespace oovx {

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(splitmix64(seed ^ 0xd1b54a32d192ed03ULL)) {}

    std::uint64_t next_u64() {
        // xoshiro-style state advance via splitmix stream: simple and portable.
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t x = state_;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    }

    // Uniform in [0, 1).
    double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    // Uniform integer in [0, n), n > 0. Rejection-free modulo bias is
    // negligible for the n used here but we reject anyway for determinism
    // of the exact distribution.
    std::uint64_t next_below(std::uint64_t n) {
        std::uint64_t threshold = (0ULL - n) % n;
        for (;;) {
            std::uint64_t r = next_u64();
            if (r >= threshold) return r % n;
        }
    }

    // Standard normal via Box-Muller on the portable uniforms.
    double next_normal() {
        if (have_spare_) {
            have_spare_ = false;
            return spare_;
        }
        double u1, u2;
        do {
            u1 = next_double();
        } while (u1 <= 0.0);
        u2 = next_double();
        double r = std::sqrt(-2.0 * std::log(u1));
        double theta = 6.283185307179586476925286766559 * u2;
        spare_ = r * std::sin(theta);
        have_spare_ = true;
        return r * std::cos(theta);
    }

    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(next_below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

private:
    std::uint64_t state_;
    bool have_spare_ = false;
    double spare_ = 0.0;
};

// Samples ranks from a Zipf distribution over {0, ..., n-1} with
// P(k) proportional to 1 / (k+1)^exponent, via inverse CDF lookup.
class ZipfSampler {
public:
    ZipfSampler(std::size_t n, double exponent) : cdf_(n) {
        double total = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
            total += 1.0 / std::pow(static_cast<double>(k + 1), exponent);
            cdf_[k] = total;
        }
        for (auto& c : cdf_) c /= total;
    }

    std::size_t sample(Rng& rng) const {
        double u = rng.next_double();
        std::size_t lo = 0, hi = cdf_.size();
        while (lo < hi) {
            std::size_t mid = (lo + hi) / 2;
            if (cdf_[mid] < u)
                lo = mid + 1;
            else
                hi = mid;
        }
        return lo < cdf_.size() ? lo : cdf_.size() - 1;
    }

private:
    std::vector<double> cdf_;
};

}  // namespace oovx
