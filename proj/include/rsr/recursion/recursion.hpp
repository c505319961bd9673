// SPDX-License-Identifier: Apache-2.0
//
// Recursive sparse joint attention. Vision tokens pass through a sparsely
// selected low-rank expert at each latent step; intermediate steps use the
// adapter output alone plus a residual to the modulated input, and the frozen
// base projection joins only on the final step. Text tokens are projected
// once and reused by every step.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rsr/adapters/lora.hpp"
#include "rsr/mmdit/block.hpp"
#include "rsr/routing/routing.hpp"

namespace rsr::recursion {

enum class Granularity {
  PerToken,   // one decision per vision token per step
  PerSample,  // token logits averaged per sample, one decision per sample per step
};

struct RecursionConfig {
  std::size_t experts = 2;
  int latent_steps = 2;
  double tau = 5.0;
  std::size_t lora_rank = 8;
  std::vector<int> target_layers;
  /// Re-apply the block's input modulation to the state before every adapter
  /// call instead of only once before the loop.
  bool remodulate_each_step = false;
  /// Gate sees y and the step embedding; false routes on vision tokens only.
  bool gate_uses_conditioning = true;
  Granularity granularity = Granularity::PerToken;

  void validate() const;
};

struct RecursiveComponent {
  adapters::ExpertBank bank;
  routing::GateNetwork gate;

  static RecursiveComponent init(const RecursionConfig& cfg, std::size_t dim, Rng& rng,
                                 std::size_t gate_hidden = 0);
  void collect(ParamList& out, const std::string& prefix) const;
};

struct StepRecord {
  std::vector<int> selected;        // per routing row
  std::vector<double> soft_probs;   // rows x M
  std::vector<double> attn_out;     // a_x for this step, [batch*Nx x D]
  std::vector<double> state;        // state carried out of the step
};

struct RecursionTrace {
  std::size_t batch = 0;
  std::size_t tokens = 0;
  std::size_t dim = 0;
  std::size_t experts = 0;
  bool per_sample = false;
  bool conditioning_ablated = false;
  int diffusion_steps = 0;           // schedule length, for bucketing
  std::vector<int> diffusion_t;      // per sample
  std::vector<int> condition;        // per sample (class id)
  std::vector<double> modulated_input;  // x̃, [batch*Nx x D]
  std::vector<StepRecord> steps;
};

/// Call accounting for the structural contract.
struct Counters {
  long adapter_token_calls = 0;   // tokens pushed through an adapter
  long adapter_steps = 0;         // dispatch rounds
  long base_projection_calls = 0;
  long residual_adds = 0;
  long context_projection_calls = 0;
};

struct RoutingControl {
  bool training = false;
  routing::Estimator estimator = routing::Estimator::StraightThrough;
  Rng* rng = nullptr;
  /// Per step, rows*M Gumbel values to replay instead of drawing.
  const std::vector<std::vector<double>>* noise = nullptr;
  /// Per step, expert ids overriding the gate (teacher forcing / replay).
  const std::vector<std::vector<int>>* forced = nullptr;
};

struct RecursionResult {
  mmdit::Streams out;  // after the gated attention residual
  std::vector<routing::RoutingDecision> decisions;
  /// a_t + x̃ for every step (equals the carried state on intermediate steps).
  std::vector<Tensor> readouts;
};

RecursionResult recursive_attention(const Tensor& x, const Tensor& c, const Tensor& y,
                                    const mmdit::MmditBlockParams& block, const RecursiveComponent& comp,
                                    const RecursionConfig& cfg, const RoutingControl& control,
                                    RecursionTrace* trace = nullptr, Counters* counters = nullptr);

/// recursive_attention followed by the block's MLP sub-layer.
struct BlockResult {
  mmdit::Streams out;
  std::vector<routing::RoutingDecision> decisions;
};
BlockResult recursive_block_forward(const Tensor& x, const Tensor& c, const Tensor& y,
                                    const mmdit::MmditBlockParams& block, const RecursiveComponent& comp,
                                    const RecursionConfig& cfg, const RoutingControl& control,
                                    RecursionTrace* trace = nullptr, Counters* counters = nullptr);

}  // namespace rsr::recursion
