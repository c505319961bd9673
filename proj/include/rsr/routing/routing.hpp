// SPDX-License-Identifier: Apache-2.0
//
// Gate network, Gumbel-Softmax hard selection, token dispatch/reassembly and
// the expert balance loss.

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rsr/numerics/nn.hpp"
#include "rsr/numerics/rng.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::routing {

struct GateNetwork {
  Mlp mlp;  // D -> hidden -> M, GELU
  std::size_t dim = 0;
  std::size_t experts = 0;

  static GateNetwork init(std::size_t dim, std::size_t experts, Rng& rng, std::size_t hidden = 0);
  void collect(ParamList& out, const std::string& prefix) const;
};

/// How the selection gradient reaches the gate.
enum class Estimator {
  StraightThrough,  // hard one-hot forward, softmax((logits+g)/tau) backward
  Detached,         // selection treated as a constant (used for gradient checks)
};

/// Per-token logits of gate(x + y + step_embed(t_latent)). `y` is [batch x D]
/// and may be undefined; with `with_conditioning` false only x is used.
Tensor gate_logits(const Tensor& x_tokens, const Tensor& y, int t_latent, const GateNetwork& gate,
                   bool with_conditioning = true);

struct RoutingDecision {
  Tensor logits;               // [rows x M]
  Tensor soft_probs;           // [rows x M]
  std::vector<int> selected;   // per row, in [0, M)
  std::vector<double> noise;   // rows*M Gumbel draws (empty in inference)
  Tensor weights;              // [rows x 1], forward value exactly 1
};

struct SelectOptions {
  bool training = false;
  Estimator estimator = Estimator::StraightThrough;
  Rng* rng = nullptr;                         // required for training without override
  std::span<const double> noise_override{};   // rows*M values replacing fresh Gumbel draws
  std::span<const int> forced_selection{};    // rows ids overriding the argmax
};

RoutingDecision gumbel_select(const Tensor& logits, double tau, const SelectOptions& opt);

/// Stable grouping of rows by selected expert.
struct TokenPermutation {
  std::vector<std::size_t> forward;  // sorted position -> original row
  std::vector<std::size_t> inverse;  // original row -> sorted position
  std::vector<std::size_t> group_begin;  // M+1 offsets into the sorted order

  static TokenPermutation group_by(std::span<const int> selected, std::size_t experts);
};

using ExpertFn = std::function<Tensor(std::size_t expert, const Tensor& rows)>;

/// Applies each expert to its rows and scatters results back to their
/// original positions. `weights` (optional, [rows x 1]) multiplies each row.
Tensor dispatch_and_reassemble(const Tensor& tokens, std::span<const int> selected, std::size_t experts,
                               const ExpertFn& apply, const Tensor& weights = Tensor());

/// M * sum_m f_m * mean_prob_m, with f_m the routed fraction (constant).
Tensor balance_loss(const Tensor& soft_probs, std::span<const int> selected);

/// Routed fraction per expert.
std::vector<double> usage(std::span<const int> selected, std::size_t experts);

}  // namespace rsr::routing
