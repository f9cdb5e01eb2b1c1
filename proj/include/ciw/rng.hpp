#pragma once

#include <cmath>
#include <cstdint>

namespace ciw {

// SplitMix64 used as a counter-based generator: draw i of stream s is
// mix(s + (i + 1) * gamma), so any draw can be recomputed independently
class SplitMix64 {
  public:
    explicit SplitMix64(std::uint64_t seed) : seed_(seed) {}

    static std::uint64_t mix(std::uint64_t z) {
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    std::uint64_t at(std::uint64_t i) const { return mix(seed_ + (i + 1) * 0x9e3779b97f4a7c15ULL); }
    std::uint64_t next() { return at(counter_++); }
    // uniform in [0, 1) with 53 random bits
    double uniform() { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
    double uniform(double a, double b) { return a + (b - a) * uniform(); }
    // standard normal via Box-Muller (one value per two draws)
    double normal() {
        double u1 = uniform(), u2 = uniform();
        if (u1 < 1e-300) u1 = 1e-300;
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
    }
    std::uint64_t counter() const { return counter_; }

  private:
    std::uint64_t seed_;
    std::uint64_t counter_ = 0;
};

}  // namespace ciw
