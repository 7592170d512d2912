#pragma once

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <vector>

namespace adjust {

// Counter-based random stream. A draw is a pure function of
// (seed, stream_id, counter), so streams can be handed to workers in any
// order and still replay exactly. Distinct stream_ids give distinct
// sequences from the same seed.
class RngStream {
 public:
  RngStream() : RngStream(0, 0) {}
  RngStream(uint64_t seed, uint64_t stream_id)
      : seed_(seed), stream_id_(stream_id), counter_(0) {}

  uint64_t seed() const { return seed_; }
  uint64_t stream_id() const { return stream_id_; }
  uint64_t counter() const { return counter_; }

  // Fresh stream with the same seed and a different stream_id.
  RngStream stream(uint64_t stream_id) const { return RngStream(seed_, stream_id); }

  uint64_t next_u64() {
    uint64_t z = mix(seed_ + 0x9e3779b97f4a7c15ULL);
    z ^= mix(stream_id_ + 0xbf58476d1ce4e5b9ULL);
    return mix(z + counter_++ * 0x94d049bb133111ebULL);
  }

  // Uniform in [0, 1) with 53 random bits.
  double next_double() { return (next_u64() >> 11) * 0x1.0p-53; }

  // Uniform integer in [0, n).
  uint64_t next_below(uint64_t n) {
    // Rejection sampling over the top multiple of n.
    uint64_t threshold = (0 - n) % n;
    for (;;) {
      uint64_t r = next_u64();
      if (r >= threshold) return r % n;
    }
  }

  // Standard normal via Box-Muller (consumes two draws).
  double next_gaussian() {
    double u1 = 0.0;
    do {
      u1 = next_double();
    } while (u1 <= 0.0);
    double u2 = next_double();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  // Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = next_below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  static uint64_t mix(uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  uint64_t seed_;
  uint64_t stream_id_;
  uint64_t counter_;
};

}  // namespace adjust
