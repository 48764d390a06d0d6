#pragma once

#include <cstdint>
#include <cmath>

namespace defront {

// splitmix64: tiny, fast, and unlike std:: distributions its output is
// identical across compilers and platforms.
inline std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

// Sequential stream seeded once.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : state_(seed) {}

    std::uint64_t next_u64() { return splitmix64(state_); }

    // uniform in [0, 1) with 53-bit resolution
    double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // standard normal via Box-Muller
    double normal() {
        double u1 = uniform();
        double u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    std::uint64_t next_below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

private:
    std::uint64_t state_;
};

// Counter-based stream: value depends only on (seed, index, lane), never on
// call order, so parallel data-loading workers stay reproducible.
class CounterRng {
public:
    explicit CounterRng(std::uint64_t seed) : seed_(seed) {}

    std::uint64_t u64_at(std::uint64_t index, std::uint64_t lane = 0) const {
        std::uint64_t s = seed_ ^ (index * 0xd1342543de82ef95ULL) ^ (lane * 0x2545f4914f6cdd1dULL);
        return splitmix64(s);
    }

    double uniform_at(std::uint64_t index, std::uint64_t lane = 0) const {
        return static_cast<double>(u64_at(index, lane) >> 11) * 0x1.0p-53;
    }

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
};

}  // namespace defront
