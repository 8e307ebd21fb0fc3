#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <utility>
#include <vector>

namespace sftik {

// Seeded RNG with hand-rolled distributions. The mt19937_64 engine sequence
// is pinned by the standard; std:: distributions are not, so uniform/normal
// draws are implemented here to keep every artifact bitwise reproducible.
class Rng {
public:
    explicit Rng(uint64_t seed) : eng_(seed) {}

    uint64_t u64() { return eng_(); }

    // Uniform in [0, 1) with 53 bits of precision.
    double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Uniform integer in [0, n), unbiased via rejection.
    int64_t index(int64_t n) {
        const uint64_t un = static_cast<uint64_t>(n);
        const uint64_t rem = (UINT64_MAX % un + 1) % un;
        const uint64_t lim = UINT64_MAX - rem;
        uint64_t x;
        do {
            x = eng_();
        } while (x > lim);
        return static_cast<int64_t>(x % un);
    }

    int64_t uniform_int(int64_t lo, int64_t hi) {  // inclusive bounds
        return lo + index(hi - lo + 1);
    }

    // Box-Muller; the paired draw is cached.
    double normal(double mu = 0.0, double sigma = 1.0) {
        if (has_spare_) {
            has_spare_ = false;
            return mu + sigma * spare_;
        }
        double u1 = 1.0 - uniform();  // (0, 1]
        double u2 = uniform();
        double r = std::sqrt(-2.0 * std::log(u1));
        double a = 2.0 * 3.14159265358979323846 * u2;
        spare_ = r * std::sin(a);
        has_spare_ = true;
        return mu + sigma * r * std::cos(a);
    }

    // Normal(0, sigma) with rejection outside ±clip_sigmas standard deviations.
    double truncated_normal(double sigma, double clip_sigmas = 2.0) {
        double z;
        do {
            z = normal();
        } while (std::abs(z) > clip_sigmas);
        return sigma * z;
    }

    template <class V>
    void shuffle(V& v) {  // Fisher-Yates
        for (size_t i = v.size(); i > 1; --i) {
            size_t j = static_cast<size_t>(index(static_cast<int64_t>(i)));
            std::swap(v[i - 1], v[j]);
        }
    }

    // Index drawn from the given (normalized) probability weights.
    size_t categorical(const std::vector<double>& weights) {
        double u = uniform();
        double acc = 0.0;
        for (size_t i = 0; i + 1 < weights.size(); ++i) {
            acc += weights[i];
            if (u < acc) return i;
        }
        return weights.empty() ? 0 : weights.size() - 1;
    }

private:
    std::mt19937_64 eng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

namespace detail {
// Stable seed mixing for deriving per-entity streams from one root seed.
inline uint64_t mix_seed(uint64_t root, uint64_t salt) {
    uint64_t x = root + 0x9e3779b97f4a7c15ULL * (salt + 1);
    x ^= x >> 30;
    x *= 0xbf58476d1ce4e5b9ULL;
    x ^= x >> 27;
    x *= 0x94d049bb133111ebULL;
    x ^= x >> 31;
    return x;
}
}  // namespace detail

}  // namespace sftik
