#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace eccfm {

// Reproducible stream of uniforms/normals keyed by (seed, stream_id).
// Distinct stream_ids give statistically independent streams, so Monte-Carlo
// frames can be farmed out to workers with stream_id = frame index and the
// counts stay identical for any worker count.
//
// mt19937_64 plus the explicit transforms below are pinned bit-for-bit by the
// standard; std::normal_distribution is not, which is why Box-Muller is
// spelled out here.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id)
      : gen_(mix(seed, stream_id)) {}

  // Uniform on [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
  }

  // Standard normal via Box-Muller; second value of each pair is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    // u1 in (0, 1] keeps the log finite.
    double u1 = 1.0 - uniform01();
    double u2 = uniform01();
    double radius = std::sqrt(-2.0 * std::log(u1));
    double angle = 2.0 * kPi * u2;
    spare_ = radius * std::sin(angle);
    has_spare_ = true;
    return radius * std::cos(angle);
  }

  // Rayleigh with the given scale: scale * sqrt(-2 ln U).
  double rayleigh(double scale) {
    double u = 1.0 - uniform01();
    return scale * std::sqrt(-2.0 * std::log(u));
  }

  // Integer uniform on {lo, ..., hi} inclusive.
  std::uint64_t uniform_int(std::uint64_t lo, std::uint64_t hi) {
    // Rejection-free modulo is biased; span is tiny here (diffusion steps,
    // message bits), but do it right anyway.
    std::uint64_t span = hi - lo + 1;
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
      x = gen_();
    } while (x >= limit);
    return lo + x % span;
  }

  bool bernoulli_half() { return (gen_() >> 63) != 0; }

 private:
  static constexpr double kPi = 3.141592653589793238462643383279502884;

  // SplitMix64 finalizer over both words; decorrelates adjacent stream ids.
  static std::uint64_t mix(std::uint64_t seed, std::uint64_t stream_id) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream_id + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace eccfm
