// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

namespace rsr {

/// Counter-based generator: draw i is a pure function of (seed, i), so
/// streams are reproducible and can be split by seed derivation.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  /// Uniform in (0, 1), clamped away from both endpoints by 1e-12.
  double uniform();
  double uniform(double lo, double hi);
  double normal();
  /// Standard Gumbel(0, 1) via -ln(-ln(U)).
  double gumbel();
  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n);

  /// Independent child stream keyed by `stream`.
  Rng split(std::uint64_t stream) const;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

std::uint64_t mix64(std::uint64_t x);

}  // namespace rsr
