// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "rsr/numerics/tensor.hpp"

namespace rsr::diffusion {

Schedule Schedule::linear(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw ConfigError("diffusion steps must be >= 1");
  if (!(beta_start > 0.0) || !(beta_end >= beta_start) || !(beta_end < 1.0)) {
    throw ConfigError("beta range must satisfy 0 < start <= end < 1");
  }
  Schedule s;
  s.steps = steps;
  s.beta.assign(static_cast<std::size_t>(steps) + 1, 0.0);
  s.alpha_bar.assign(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    s.beta[static_cast<std::size_t>(t)] = beta_start + frac * (beta_end - beta_start);
    s.alpha_bar[static_cast<std::size_t>(t)] =
        s.alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - s.beta[static_cast<std::size_t>(t)]);
  }
  return s;
}

double Schedule::posterior_variance(int t) const {
  check_step(t);
  if (t == 1) return 0.0;
  const auto i = static_cast<std::size_t>(t);
  return beta[i] * (1.0 - alpha_bar[i - 1]) / (1.0 - alpha_bar[i]);
}

void Schedule::check_step(int t) const {
  if (t < 1 || t > steps) {
    throw std::out_of_range("diffusion step " + std::to_string(t) + " outside [1, " + std::to_string(steps) + "]");
  }
}

std::vector<double> mix(std::span<const double> x0, std::span<const double> eps, double alpha_bar) {
  const double a = std::sqrt(alpha_bar), b = std::sqrt(1.0 - alpha_bar);
  std::vector<double> out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

std::pair<std::vector<double>, std::vector<double>> add_noise(std::span<const double> x0, int t,
                                                              const Schedule& s, Rng& rng) {
  s.check_step(t);
  std::vector<double> eps(x0.size());
  for (auto& e : eps) e = rng.normal();
  auto xt = mix(x0, eps, s.alpha_bar[static_cast<std::size_t>(t)]);
  return {std::move(xt), std::move(eps)};
}

}  // namespace rsr::diffusion
