// SPDX-License-Identifier: Apache-2.0
//
// DDPM noise schedule and forward process. Index t runs 1..T; entry 0 is the
// clean-data limit (alpha_bar = 1).

#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "rsr/numerics/rng.hpp"

namespace rsr::diffusion {

struct Schedule {
  int steps = 0;
  std::vector<double> beta;       // size T+1, beta[0] = 0
  std::vector<double> alpha_bar;  // size T+1, alpha_bar[0] = 1

  /// Linearly spaced betas from beta_start (t=1) to beta_end (t=T).
  static Schedule linear(int steps, double beta_start, double beta_end);

  double alpha(int t) const { return 1.0 - beta.at(static_cast<std::size_t>(t)); }
  /// Variance of q(x_{t-1} | x_t, x_0).
  double posterior_variance(int t) const;
  void check_step(int t) const;
};

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps with eps ~ N(0, 1).
/// Returns (x_t, eps).
std::pair<std::vector<double>, std::vector<double>> add_noise(std::span<const double> x0, int t,
                                                              const Schedule& s, Rng& rng);

/// Same formula with a given alpha_bar and noise; used by the sampler tests.
std::vector<double> mix(std::span<const double> x0, std::span<const double> eps, double alpha_bar);

}  // namespace rsr::diffusion
