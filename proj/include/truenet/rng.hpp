#pragma once

#include <array>
#include <cmath>
#include <cstdint>

namespace truenet {

// xoshiro256** with splitmix64 seeding. Hand-rolled so that the state is
// four u64 words we can serialize into checkpoints and reproduce exactly.
class Rng {
 public:
  explicit Rng(uint64_t seed) {
    uint64_t x = seed;
    for (auto& w : s_) w = splitmix64(x);
  }

  // Independent deterministic stream for (seed, purpose, index), so batches,
  // masking and sampling at step k can be regenerated without replaying
  // steps 0..k-1.
  static Rng stream(uint64_t seed, uint64_t purpose, uint64_t index) {
    uint64_t x = seed;
    uint64_t a = splitmix64(x);
    x ^= purpose * 0x9e3779b97f4a7c15ULL;
    uint64_t b = splitmix64(x);
    x ^= index * 0xbf58476d1ce4e5b9ULL;
    uint64_t c = splitmix64(x);
    Rng r(a ^ b ^ c);
    return r;
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(s_[1] * 5, 7) * 9;
    const uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = rotl(s_[3], 45);
    return result;
  }

  // [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  // [0, n) without modulo bias
  int64_t uniform_int(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = UINT64_MAX - UINT64_MAX % un;
    uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int64_t>(x % un);
  }

  // Box-Muller; consumes two uniforms per draw, no cached spare to keep the
  // state trivially serializable.
  double normal(double mean, double stddev) {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    return mean + stddev * r * std::cos(6.283185307179586476925286766559 * u2);
  }

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

  static uint64_t splitmix64(uint64_t& x) {
    uint64_t z = (x += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }
  std::array<uint64_t, 4> s_{};
};

// Stream purposes used across the trainer and tools. Fixed constants so a
// checkpoint's seed fully determines every random decision.
namespace rng_purpose {
constexpr uint64_t kInit = 1;      // parameter init
constexpr uint64_t kShuffle = 2;   // epoch line order
constexpr uint64_t kMask = 3;      // per-step corruption
constexpr uint64_t kSample = 4;    // ELECTRA generator sampling
constexpr uint64_t kEvalMask = 5;  // per-line eval masking
constexpr uint64_t kSwap = 6;      // synonym swap transform
}  // namespace rng_purpose

}  // namespace truenet
