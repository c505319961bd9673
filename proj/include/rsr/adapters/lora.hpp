// SPDX-License-Identifier: Apache-2.0
//
// Low-rank experts on the vision-branch Q/K/V projections.

#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "rsr/numerics/nn.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::adapters {

enum class Target { Q = 0, K = 1, V = 2 };

struct LowRankPair {
  Tensor a;  // [r x D]
  Tensor b;  // [D x r]
};

struct LoraAdapter {
  LowRankPair q, k, v;

  std::size_t rank() const { return q.a.rows(); }
  std::size_t dim() const { return q.a.cols(); }
  const LowRankPair& pair(Target t) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

struct ExpertBank {
  std::vector<LoraAdapter> experts;

  std::size_t size() const { return experts.size(); }
  std::size_t rank() const { return experts.at(0).rank(); }
  std::size_t dim() const { return experts.at(0).dim(); }
  void collect(ParamList& out, const std::string& prefix) const;
};

/// The low-rank delta only: rows of x mapped by (B A), i.e. x Aᵀ Bᵀ.
Tensor lora_apply(const LoraAdapter& adapter, Target target, const Tensor& x);

/// [delta_q | delta_k | delta_v] as one [N x 3D] tensor.
Tensor lora_apply_qkv(const LoraAdapter& adapter, const Tensor& x);

/// A ~ N(0, 1/r), B = 0 for every expert and target.
ExpertBank init_expert_bank(std::size_t experts, std::size_t rank, std::size_t dim, Rng& rng);

}  // namespace rsr::adapters
