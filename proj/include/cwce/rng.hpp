#pragma once

#include <cstdint>

namespace cwce {

// Counter-based generator built on the SplitMix64 update (Steele, Lea & Flood,
// "Fast splittable pseudorandom number generators", OOPSLA 2014). Output i of
// a stream with key K is mix(K + (i+1)*GAMMA), so draws are addressable by
// index and streams can be handed out per individual or per Monte-Carlo draw
// without any coordination. Identical (seed, index) always produces identical
// draws, independent of thread count or platform.
class Rng {
 public:
  static constexpr std::uint64_t kGamma = 0x9E3779B97F4A7C15ull;

  explicit Rng(std::uint64_t key) : key_(key) {}

  // Independent stream derived from (seed, index).
  static Rng stream(std::uint64_t seed, std::uint64_t index) {
    return Rng(mix(mix(seed) ^ mix(index + 0x632BE59BD9B4E019ull)));
  }

  std::uint64_t next_u64() { return mix(key_ + (++ctr_) * kGamma); }

  // uniform on (0,1); 52 random bits, never exactly 0 or 1
  double next_u01() {
    return (static_cast<double>(next_u64() >> 12) + 0.5) * 0x1.0p-52;
  }

  // standard normal via the AS 241 inverse CDF (portable, no rejection loop)
  double next_normal();

  static std::uint64_t mix(std::uint64_t z) {
    z += kGamma;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t key() const { return key_; }

 private:
  std::uint64_t key_ = 0;
  std::uint64_t ctr_ = 0;
};

// Inverse of the standard normal CDF, algorithm AS 241 (Wichura 1988),
// double-precision variant PPND16. Relative error below 1e-15 away from the
// extreme tails.
double std_normal_quantile(double p);

inline double Rng::next_normal() { return std_normal_quantile(next_u01()); }

}  // namespace cwce
