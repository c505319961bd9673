// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rsr/diffusion/model.hpp"
#include "rsr/diffusion/schedule.hpp"

namespace rsr::diffusion {

struct SampleOptions {
  std::uint64_t seed = 0;
  std::optional<int> latent_steps;
  bool use_recursion = true;
  std::size_t chunk = 32;  // samples per forward
  /// Receives (sample offset of the chunk, diffusion t, layer, trace).
  std::function<void(std::size_t, int, std::size_t, recursion::RecursionTrace&)> trace;
};

/// Ancestral DDPM sampling with noise-free routing. Predicted x0 is clipped
/// to [-1, 1] before forming the posterior mean; the result is clamped to
/// [-1, 1]. Sample i draws its noise from a stream derived from (seed, i).
/// Chunk size changes GEMM blocking and hence rounding, so keep it fixed when
/// bit-exact reproduction matters. Returns n x pixels.
std::vector<double> sample(const DitModel& model, const Schedule& schedule, std::span<const int> labels,
                           const SampleOptions& opt);

}  // namespace rsr::diffusion
