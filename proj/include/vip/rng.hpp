#pragma once

// Deterministic random number generation.
//
// The simulator must reproduce bit-identical frames for a given
// (seed, frame_index) regardless of how frames are distributed over
// threads, so every frame draws from its own substream. Substreams are
// derived by feeding seed and stream id through splitmix64 and using four
// consecutive outputs as the xoshiro256++ state. std:: distributions are
// deliberately avoided: their sampling algorithms are not pinned down by
// the standard and differ across library versions.

#include <cmath>
#include <cstdint>

#include "vip/errors.hpp"

namespace vip {

struct SplitMix64 {
  std::uint64_t state;
  explicit SplitMix64(std::uint64_t s) : state(s) {}
  std::uint64_t next() {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
};

class Rng {
 public:
  explicit Rng(std::uint64_t seed) { seed_state(seed); }

  // Independent substream for (seed, stream). Used as one stream per frame.
  static Rng for_stream(std::uint64_t seed, std::uint64_t stream) {
    SplitMix64 mix(seed);
    std::uint64_t mixed = mix.next() ^ (stream + 0x632be59bd9b4e019ULL) * 0x9e3779b97f4a7c15ULL;
    Rng r(0);
    r.seed_state(mixed);
    return r;
  }

  std::uint64_t next_u64() {
    const std::uint64_t result = rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0,1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) {
    if (!(lo <= hi)) throw DomainError("Rng::uniform: lo > hi");
    return lo + (hi - lo) * uniform();
  }

  // Standard normal via the polar (Marsaglia) method; pairs are cached.
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

  double exponential() { return -std::log1p(-uniform()); }

  // Poisson counts by summing exponential inter-arrival times. O(mean) per
  // draw, exact for all means, no underflow issues at large mean.
  std::uint64_t poisson(double mean) {
    if (mean < 0.0) throw DomainError("Rng::poisson: mean must be >= 0");
    if (mean == 0.0) return 0;
    double t = exponential();
    std::uint64_t k = 0;
    while (t <= mean) {
      ++k;
      t += exponential();
    }
    return k;
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  void seed_state(std::uint64_t seed) {
    SplitMix64 mix(seed);
    for (auto& w : s_) w = mix.next();
    if ((s_[0] | s_[1] | s_[2] | s_[3]) == 0) s_[0] = 1;  // all-zero state is absorbing
    have_spare_ = false;
    spare_ = 0.0;
  }

  std::uint64_t s_[4];
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace vip
