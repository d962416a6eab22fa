#pragma once

#include <cmath>
#include <cstdint>

// Self-contained linear congruential generator so that seeded weight
// initialization is reproducible across platforms and standard library
// versions (std::normal_distribution is not pinned by the standard).

namespace dge {

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {
    // Decorrelate small seeds.
    next();
    next();
  }

  uint64_t next() {
    state_ = state_ * 6364136223846793005ull + 1442695040888963407ull;
    return state_;
  }

  /// Uniform in [0, 1) with 53 random bits.
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller; pairs are cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 1.0 - uniform();  // keep away from 0 for the log
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  float normal(float stddev) { return static_cast<float>(normal() * stddev); }

 private:
  uint64_t state_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace dge
