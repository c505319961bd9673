// SPDX-License-Identifier: Apache-2.0

#include "rsr/numerics/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace rsr {

std::uint64_t mix64(std::uint64_t x) {
  // splitmix64 finalizer
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t Rng::next_u64() { return mix64(mix64(seed_) ^ mix64(counter_++ ^ 0xD1B54A32D192ED03ull)); }

double Rng::uniform() {
  const double u = static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  return std::clamp(u, 1e-12, 1.0 - 1e-12);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  const double u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::gumbel() { return -std::log(-std::log(uniform())); }

std::uint64_t Rng::below(std::uint64_t n) { return n == 0 ? 0 : next_u64() % n; }

Rng Rng::split(std::uint64_t stream) const { return Rng(mix64(seed_ ^ mix64(stream + 0x632BE59BD9B4E019ull))); }

}  // namespace rsr
