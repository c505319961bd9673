// SPDX-License-Identifier: Apache-2.0
//
// Patch-token DiT with optional recursive blocks, ε-prediction head.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "rsr/mmdit/block.hpp"
#include "rsr/recursion/recursion.hpp"

namespace rsr::diffusion {

struct DitConfig {
  std::size_t channels = 1;
  std::size_t height = 16;
  std::size_t width = 16;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 6;
  std::size_t classes = 4;
  /// target_layers are 1-based block indices.
  recursion::RecursionConfig recursion;
  bool recursion_enabled = true;

  void validate() const;
  std::size_t tokens() const { return (height / patch) * (width / patch); }
  std::size_t patch_dim() const { return channels * patch * patch; }
  std::size_t pixels() const { return channels * height * width; }
  bool is_target(std::size_t layer_index0) const;
};

struct DitModel {
  DitConfig cfg;
  Linear patch_embed;   // patch_dim -> D
  Tensor pos;           // [N x D], fixed
  Tensor class_embed;   // [K x D]
  std::vector<mmdit::MmditBlockParams> blocks;
  std::vector<std::optional<recursion::RecursiveComponent>> recursive;  // per block
  Linear final_mod;     // D -> 2D (scale, shift)
  Linear head;          // D -> patch_dim, zero at init

  static DitModel init(const DitConfig& cfg, std::uint64_t seed);

  /// Everything except expert banks and gates.
  ParamList base_params() const;
  ParamList recursive_params() const;
  ParamList all_params() const;
};

/// [count x C x H x W] images -> [count*N x patch_dim] tokens.
std::vector<double> patchify(std::span<const double> images, std::size_t count, const DitConfig& cfg);
std::vector<double> unpatchify(std::span<const double> tokens, std::size_t count, const DitConfig& cfg);

/// Called once per recursive layer per forward with a filled trace.
using TraceSink = std::function<void(std::size_t layer, recursion::RecursionTrace&)>;

struct ForwardOptions {
  bool use_recursion = true;
  recursion::RoutingControl control;
  std::optional<int> latent_steps;  // test-time override of T_latent
  const TraceSink* trace = nullptr;
  recursion::Counters* counters = nullptr;
};

struct ForwardResult {
  Tensor eps;  // [B*N x patch_dim]
  /// Routing decisions of every recursive layer, layer-major then step.
  std::vector<routing::RoutingDecision> decisions;
};

ForwardResult forward(const DitModel& model, const Tensor& patches, std::span<const int> t,
                      std::span<const int> labels, const ForwardOptions& opt);

/// Conditioning rows y = class_embed[label] + sinusoidal(t), [B x D].
Tensor conditioning(const DitModel& model, std::span<const int> t, std::span<const int> labels);

}  // namespace rsr::diffusion
