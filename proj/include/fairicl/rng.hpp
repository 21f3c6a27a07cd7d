#pragma once

#include <cstdint>
#include <random>
#include <string_view>
#include <vector>

namespace fairicl {

// FNV-1a 64-bit over raw bytes. Used for config fingerprints and corpus digests.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char ch : bytes) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    return h;
}

// splitmix64 finalizer.
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Seed-derivation schedule: per-run seed = mix64(base_seed, run index),
// per-query demo seed = mix64(run seed, query id), per-sample generation
// seed = mix64(config seed, sample index). Every derived stream in the
// codebase goes through this function so draws can be re-simulated.
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x9e3779b97f4a7c15ULL));
}

// Deterministic RNG. mt19937_64 is fully specified by the standard; all
// bounded/real draws below are hand-rolled so the byte streams do not depend
// on the standard library's distribution implementations.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    std::uint64_t next() { return engine_(); }

    // Unbiased draw in [0, n) by modulo rejection: accept x < 2^64 - (2^64 mod n).
    std::uint64_t below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = std::uint64_t(0) - (std::uint64_t(0) - n) % n;
        std::uint64_t x = engine_();
        while (limit != 0 && x >= limit) x = engine_();
        return x % n;
    }

    // Uniform in [0,1) with 53 random bits.
    double real01() { return double(engine_() >> 11) * 0x1.0p-53; }

    // Box-Muller, cosine branch only (one value per two uniforms, no cache).
    double normal(double mean, double stddev) {
        const double u = 1.0 - real01();
        const double v = real01();
        const double r = std::sqrt(-2.0 * std::log(u));
        const double z = r * std::cos(6.283185307179586 * v);
        return mean + stddev * z;
    }

    // Fisher-Yates, back to front.
    template <typename T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            const std::size_t j = std::size_t(below(i));
            std::swap(v[i - 1], v[j]);
        }
    }

    // k distinct indices from [0, n), partial Fisher-Yates over 0..n-1.
    // Output order is the draw order.
    std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k) {
        std::vector<std::size_t> pool(n);
        for (std::size_t i = 0; i < n; ++i) pool[i] = i;
        std::vector<std::size_t> out;
        out.reserve(k);
        for (std::size_t i = 0; i < k && i < n; ++i) {
            const std::size_t j = i + std::size_t(below(n - i));
            std::swap(pool[i], pool[j]);
            out.push_back(pool[i]);
        }
        return out;
    }

private:
    std::mt19937_64 engine_;
};

} // namespace fairicl
