// SPDX-License-Identifier: Apache-2.0
//
// Joint-attention transformer block with per-stream adaptive modulation.
// Vision and text streams keep separate projections and are concatenated
// (text first) only inside attention. With no text stream the block is a
// plain adaLN self-attention block.

#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <utility>

#include "rsr/numerics/nn.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::mmdit {

/// Per-sample modulation vectors, each [batch x D].
struct Modulation {
  Tensor alpha, beta;     // attention input scale / shift
  Tensor gamma;           // attention residual gate
  Tensor delta, epsilon;  // MLP input scale / shift
  Tensor zeta;            // MLP residual gate
};

struct StreamParams {
  Linear mod;  // y[D] -> 6D, ordered alpha,beta,gamma,delta,epsilon,zeta
  Tensor wq, wk, wv, wo;
  Mlp mlp;

  Modulation modulation(const Tensor& y) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct MmditBlockParams {
  std::size_t dim = 0;
  std::size_t heads = 1;
  double ln_eps = 1e-6;
  StreamParams vision;
  std::optional<StreamParams> text;

  /// Gates start at zero (identity block) unless `zero_gates` is false, in
  /// which case the modulation head gets small random weights and biases.
  static MmditBlockParams init(std::size_t dim, std::size_t heads, bool joint, Rng& rng,
                               bool zero_gates = true);

  bool joint() const { return text.has_value(); }
  double attn_scale() const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct Qkv {
  Tensor q, k, v;
};

/// scale ⊙ layernorm(tokens) + shift, row-wise. tokens is [batch*n x D];
/// scale and shift are [batch x D] or a single [D] vector.
Tensor modulate(const Tensor& tokens, const Tensor& scale, const Tensor& shift, double eps = 1e-6);

/// Frozen base projection of one stream.
Qkv project(const Tensor& tokens, const StreamParams& p);

/// Multi-head attention over per-sample [text; vision] sequences. `text` may
/// be null. Returns raw (pre-W_O) outputs for vision and text.
std::pair<Tensor, Tensor> attention_core(const Qkv* text, const Qkv& vision, std::size_t batch,
                                         std::size_t heads, double scale);

/// Projects both modulated streams, attends jointly, and applies each
/// stream's W_O. `c_mod` may be undefined (no text tokens).
std::pair<Tensor, Tensor> joint_attention(const Tensor& x_mod, const Tensor& c_mod,
                                          const MmditBlockParams& p, std::size_t batch);

struct Streams {
  Tensor x;
  Tensor c;  // undefined without a text stream
};

/// x + gamma ⊙ attn_out, per stream.
Streams attention_residual(const Streams& in, const Streams& attn_out, const Modulation& mx,
                           const Modulation* mc);
/// h + zeta ⊙ MLP(delta · LN(h) + epsilon), per stream.
Streams mlp_sublayer(const Streams& h, const MmditBlockParams& p, const Modulation& mx,
                     const Modulation* mc);

/// Full block. x is [batch*Nx x D], c is [batch*Nc x D] or undefined,
/// y is [batch x D].
Streams block_forward(const Tensor& x, const Tensor& c, const Tensor& y, const MmditBlockParams& p);

}  // namespace rsr::mmdit
