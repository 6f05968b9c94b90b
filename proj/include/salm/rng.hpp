#pragma once

#include <cmath>
#include <cstdint>

namespace salm {

/// Counter-based random stream: output i is a pure function of (seed, i),
/// so draws are reproducible across runs and platforms regardless of how
/// the stream is consumed.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  /// Independent stream derived from this one; `stream_id` selects it.
  RngStream fork(std::uint64_t stream_id) const {
    return RngStream(mix(seed_ ^ mix(stream_id + 0x632BE59BD9B4E019ULL)));
  }

  std::uint64_t next_u64() { return mix(seed_ + golden * ++counter_); }

  /// Uniform in [0, 1), 53-bit resolution.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Standard normal via Box-Muller (one value per call, no caching, so the
  /// counter advances identically however results are used).
  double next_normal() {
    double u1 = next_double();
    const double u2 = next_double();
    if (u1 <= 0.0) u1 = 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.14159265358979323846 * u2);
  }

  bool next_bernoulli(double p) { return next_double() < p; }

 private:
  static constexpr std::uint64_t golden = 0x9E3779B97F4A7C15ULL;

  // SplitMix64 finalizer.
  static std::uint64_t mix(std::uint64_t z) {
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace salm
