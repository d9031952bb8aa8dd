// Deterministic seeded random streams.
//
// All stochastic behaviour in the project (weight init, dropout masks, noise
// draws, shuffles, data synthesis) flows through Rng so that a run is a pure
// function of its seeds. Distributions are hand-rolled on top of a splitmix64
// generator; the standard library distributions are avoided because their
// output is implementation-defined.
#pragma once

#include <cmath>
#include <cstdint>
#include <string_view>

namespace avword {

namespace detail {
inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ull);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}
}  // namespace detail

// Mixes a label and indices into a seed, for carving independent substreams
// out of one master seed.
inline std::uint64_t derive_seed(std::uint64_t base, std::string_view tag,
                                 std::uint64_t a = 0, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  std::uint64_t h = base ^ 0x6a09e667f3bcc909ull;
  for (char ch : tag) {
    h ^= static_cast<std::uint64_t>(static_cast<unsigned char>(ch));
    h *= 0x100000001b3ull;
  }
  std::uint64_t s = h;
  h = detail::splitmix64(s) ^ a;
  h = detail::splitmix64(h) ^ b;
  h = detail::splitmix64(h) ^ c;
  return detail::splitmix64(h);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : state_(seed ^ 0x2545f4914f6cdd1dull) {
    // warm up so that nearby seeds decorrelate
    next_u64();
    next_u64();
  }

  std::uint64_t next_u64() { return detail::splitmix64(state_); }

  // uniform in [0, 1)
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // uniform integer in [0, n)
  std::uint64_t next_below(std::uint64_t n) {
    // rejection-free multiply-shift; bias negligible for n << 2^64
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * n) >> 64);
  }

  bool bernoulli(double p) { return next_double() < p; }

  // standard normal via Box-Muller (one value per call, second discarded:
  // keeps the stream position independent of call pairing)
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  Rng fork(std::string_view tag, std::uint64_t a = 0, std::uint64_t b = 0,
           std::uint64_t c = 0) const {
    return Rng(derive_seed(state_, tag, a, b, c));
  }

 private:
  std::uint64_t state_;
};

}  // namespace avword
