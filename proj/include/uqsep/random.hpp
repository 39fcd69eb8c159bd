#pragma once

#include <cstdint>
#include <cmath>
#include <cstring>
#include <random>
#include <vector>

namespace uqsep {

// splitmix64 finalizer. Used to derive independent stream seeds from a master
// seed so that per-member / per-iteration streams never alias.
inline std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag) {
    return mix64(master ^ mix64(tag));
}

inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t tag_a, std::uint64_t tag_b) {
    return derive_seed(derive_seed(master, tag_a), tag_b);
}

// Small string tags ("train", "acquire", ...) folded into a 64-bit value.
inline std::uint64_t tag64(const char* s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (; *s; ++s) h = (h ^ static_cast<unsigned char>(*s)) * 0x100000001b3ull;
    return h;
}

inline std::uint64_t hash_doubles(const double* v, std::size_t n, std::uint64_t seed = 0) {
    std::uint64_t h = mix64(seed ^ n);
    for (std::size_t i = 0; i < n; ++i) {
        std::uint64_t bits;
        std::memcpy(&bits, &v[i], sizeof bits);
        h = mix64(h ^ bits);
    }
    return h;
}

// Deterministic random stream. The distribution transforms are spelled out
// here (instead of <random> distributions) so a given seed yields the exact
// same sequence on every standard library; that property backs all the
// bit-reproducibility guarantees in this project.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : gen_(seed) {}

    // uniform in [0, 1)
    double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + uniform() * (hi - lo); }

    // standard normal via Box-Muller; consumes exactly two uniforms per call
    double normal() {
        const double two_pi = 6.283185307179586476925286766559;
        double u1 = 1.0 - uniform();  // (0, 1], keeps log finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    double normal(double mu, double sigma) { return mu + sigma * normal(); }

    // uniform index in [0, n), modulo-bias free
    std::size_t index(std::size_t n) {
        const std::uint64_t nn = static_cast<std::uint64_t>(n);
        const std::uint64_t limit = UINT64_MAX - UINT64_MAX % nn;
        std::uint64_t x;
        do { x = gen_(); } while (x >= limit);
        return static_cast<std::size_t>(x % nn);
    }

    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = index(i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::uint64_t raw() { return gen_(); }

private:
    std::mt19937_64 gen_;
};

}  // namespace uqsep
