#ifndef LDL_RNG_HPP
#define LDL_RNG_HPP

#include <cmath>
#include <cstdint>
#include <numbers>

namespace ldl {

namespace detail {

// SplitMix64 finalizer. Statelessly maps any 64-bit input to a
// well-mixed 64-bit output, which is what makes the noise stream
// position-addressable.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in (0, 1]; never returns 0 so log() below is safe.
inline double to_unit_positive(std::uint64_t x) {
  return static_cast<double>((x >> 11) + 1) * 0x1.0p-53;
}

// Uniform in [0, 1).
inline double to_unit(std::uint64_t x) {
  return static_cast<double>(x >> 11) * 0x1.0p-53;
}

}  // namespace detail

/// Combines a master seed with stream labels into an independent seed.
inline std::uint64_t derive_seed(std::uint64_t master, std::uint64_t a,
                                 std::uint64_t b = 0, std::uint64_t c = 0) {
  std::uint64_t s = detail::mix64(master);
  s = detail::mix64(s ^ detail::mix64(a + 0x1000));
  s = detail::mix64(s ^ detail::mix64(b + 0x2000));
  s = detail::mix64(s ^ detail::mix64(c + 0x3000));
  return s;
}

/// Sequential pseudo-random generator for parameter init, shuffling and
/// test fixtures. SplitMix64 state chain; deterministic for a given seed.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed ^ 0x5bf0'3635'0b5c'ca5fULL)) {}

  std::uint64_t next_u64() {
    state_ += 0x9e3779b97f4a7c15ULL;
    return detail::mix64(state_);
  }

  /// Uniform in [0, 1).
  double uniform() { return detail::to_unit(next_u64()); }

  /// Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller.
  double normal() {
    double u1 = detail::to_unit_positive(next_u64());
    double u2 = detail::to_unit(next_u64());
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Uniform integer in [0, n). n must be positive.
  std::uint64_t below(std::uint64_t n) {
    // Multiply-shift; bias is < 2^-64 * n, irrelevant at our sizes.
    return static_cast<std::uint64_t>(
        (static_cast<__uint128_t>(next_u64()) * n) >> 64);
  }

 private:
  std::uint64_t state_;
};

/// Counter-addressed source of standard-normal draws used by the
/// reparameterized sampling step. Identical (seed, position) pairs give
/// identical draws, so a stream can be forked, replayed, or consumed in
/// parallel chunks without coordination.
class NoiseSource {
 public:
  explicit NoiseSource(std::uint64_t seed) : seed_(seed) {}

  /// Draw at an absolute position without touching the cursor.
  double normal_at(std::uint64_t position) const {
    std::uint64_t base = detail::mix64(seed_ ^ detail::mix64(position));
    double u1 = detail::to_unit_positive(base);
    double u2 = detail::to_unit(detail::mix64(base));
    return std::sqrt(-2.0 * std::log(u1)) *
           std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Draw at the cursor and advance it.
  double normal() { return normal_at(position_++); }

  void reset() { position_ = 0; }
  void skip(std::uint64_t n) { position_ += n; }

  /// Copy positioned `offset` draws ahead of the cursor.
  NoiseSource fork_at(std::uint64_t offset) const {
    NoiseSource ns(seed_);
    ns.position_ = position_ + offset;
    return ns;
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t position() const { return position_; }

 private:
  std::uint64_t seed_;
  std::uint64_t position_ = 0;
};

}  // namespace ldl

#endif  // LDL_RNG_HPP
