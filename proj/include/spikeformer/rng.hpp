// Deterministic random streams.
//
// Everything that consumes randomness (parameter init, shuffling, event
// augmentation, drop-path, synthetic data) draws from an RngStream.  The
// engine is splitmix64 and every distribution is implemented here from raw
// 64-bit draws, so a given seed produces the same byte-for-byte results on
// any platform — std::*_distribution would tie reproducibility to the
// standard library's internals.
#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <string>
#include <vector>

namespace spikeformer {

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  state += 0x9e3779b97f4a7c15ULL;
  std::uint64_t z = state;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : state_(seed) {
    // burn a few outputs so nearby seeds decorrelate
    for (int i = 0; i < 4; ++i) next_u64();
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // Child stream keyed by a purpose tag; independent of draw order on the
  // parent because it only hashes (seed, tag).
  RngStream child(std::uint64_t tag) const {
    std::uint64_t s = state_ ^ (0x516cc24f80775817ULL * (tag + 1));
    return RngStream(detail::splitmix64(s));
  }

  // Uniform in [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi) {
    if (lo > hi)
      throw std::invalid_argument("uniform_int: empty range [" + std::to_string(lo) + "," +
                                  std::to_string(hi) + "]");
    const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
    // Rejection sampling removes modulo bias and stays reproducible.
    const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % span;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return lo + static_cast<std::int64_t>(r % span);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Standard normal via Box-Muller (one draw per call, pairs not cached so
  // the stream position stays easy to reason about).
  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Normal clipped by re-draw to +/- 2 standard deviations.
  double truncated_normal(double mean, double stddev) {
    double z = normal();
    while (z < -2.0 || z > 2.0) z = normal();
    return mean + stddev * z;
  }

  // In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t state_;
};

}  // namespace spikeformer
