// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace rsr::cli {

struct GradCheckEntry {
  std::string name;
  double max_relative_error = 0.0;
  bool passed = false;
};

inline constexpr double kGradCheckTolerance = 1e-4;

/// Every differentiable op in isolation, then the composite components:
/// mmdit-block, adapters, routing (soft path) and a full M=2, T_latent=2
/// recursion at D=8. Each name appears once.
std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed);

}  // namespace rsr::cli
