#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

namespace sidrec {

// FNV-1a, used for feature hashing, seed derivation and manifest content hashes.
inline uint64_t fnv1a64(std::string_view s, uint64_t h = 1469598103934665603ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline uint64_t hash_mix(uint64_t h, uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        h ^= (v >> (8 * i)) & 0xff;
        h *= 1099511628211ull;
    }
    return h;
}

// Deterministic RNG. Distributions are hand-rolled so output does not depend
// on the standard library implementation.
class Rng {
public:
    explicit Rng(uint64_t seed) : state_(seed ? seed : 0x9e3779b97f4a7c15ull) {}

    uint64_t next_u64() {
        // splitmix64
        uint64_t z = (state_ += 0x9e3779b97f4a7c15ull);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller without cached spare (keeps the stream position obvious).
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        while (u1 <= 1e-300) u1 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    // integer in [0, n)
    uint64_t below(uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

    // derived independent stream
    Rng derive(uint64_t a, uint64_t b = 0, uint64_t c = 0) const {
        uint64_t h = hash_mix(hash_mix(hash_mix(hash_mix(1469598103934665603ull, state_), a), b), c);
        return Rng(h);
    }

    uint64_t state() const { return state_; }

private:
    uint64_t state_;
};

// Static-partition parallel loop; results must be written by index so the
// outcome is independent of scheduling. Honors SIDREC_THREADS if set.
void parallel_for(size_t n, const std::function<void(size_t)>& fn);

size_t worker_count();

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace sidrec
