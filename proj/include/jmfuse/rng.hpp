#pragma once

#include <cmath>
#include <cstdint>
#include <utility>
#include <vector>

namespace jmfuse {

// splitmix64 stream. Every random draw in the project goes through this
// generator so that runs are bit-reproducible across compilers; the std::
// distributions make no such guarantee.
class SplitMix64 {
public:
    explicit SplitMix64(uint64_t seed) : state_(seed) {}

    uint64_t next() {
        state_ += 0x9e3779b97f4a7c15ULL;
        uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }

    // uniform in [0, 1), 53-bit resolution
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // Box-Muller; consumes two draws per call
    double gaussian() {
        const double u1 = 1.0 - uniform(); // (0, 1], keeps log finite
        const double u2 = uniform();
        const double two_pi = 6.283185307179586476925286766559;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(two_pi * u2);
    }

    // integer in [0, n); n must be positive
    uint64_t below(uint64_t n) { return next() % n; }

private:
    uint64_t state_;
};

// Fisher-Yates with a fixed visit order.
template <typename T>
void shuffle(std::vector<T>& v, SplitMix64& rng) {
    for (size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[rng.below(i)]);
    }
}

// Derives an independent stream seed from a base seed and a stream index.
inline uint64_t mix_seed(uint64_t base, uint64_t stream) {
    SplitMix64 r(base ^ (0x9e3779b97f4a7c15ULL * (stream + 1)));
    r.next();
    return r.next();
}

} // namespace jmfuse
