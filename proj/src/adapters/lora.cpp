// SPDX-License-Identifier: Apache-2.0

#include "rsr/adapters/lora.hpp"

#include <cmath>

#include "rsr/numerics/ops.hpp"

namespace rsr::adapters {

const LowRankPair& LoraAdapter::pair(Target t) const {
  switch (t) {
    case Target::Q: return q;
    case Target::K: return k;
    case Target::V: return v;
  }
  throw std::invalid_argument("unknown adapter target");
}

void LoraAdapter::collect(ParamList& out, const std::string& prefix) const {
  const char* names[] = {"q", "k", "v"};
  const LowRankPair* pairs[] = {&q, &k, &v};
  for (int i = 0; i < 3; ++i) {
    out.emplace_back(prefix + "." + names[i] + ".a", pairs[i]->a);
    out.emplace_back(prefix + "." + names[i] + ".b", pairs[i]->b);
  }
}

void ExpertBank::collect(ParamList& out, const std::string& prefix) const {
  for (std::size_t m = 0; m < experts.size(); ++m) experts[m].collect(out, prefix + ".expert" + std::to_string(m));
}

Tensor lora_apply(const LoraAdapter& adapter, Target target, const Tensor& x) {
  const auto& p = adapter.pair(target);
  if (x.rank() != 2 || x.cols() != p.a.cols()) {
    throw ShapeError("lora_apply: input " + shape_str(x.shape()) + " does not match adapter width " +
                     std::to_string(p.a.cols()));
  }
  return ops::matmul(ops::matmul(x, ops::transpose(p.a)), ops::transpose(p.b));
}

Tensor lora_apply_qkv(const LoraAdapter& adapter, const Tensor& x) {
  return ops::concat_cols({lora_apply(adapter, Target::Q, x), lora_apply(adapter, Target::K, x),
                           lora_apply(adapter, Target::V, x)});
}

ExpertBank init_expert_bank(std::size_t experts, std::size_t rank, std::size_t dim, Rng& rng) {
  if (experts < 1) throw ConfigError("expert bank needs at least one expert");
  if (rank < 1 || rank > dim) {
    throw ConfigError("LoRA rank " + std::to_string(rank) + " must lie in [1, " + std::to_string(dim) + "]");
  }
  ExpertBank bank;
  const double sd = 1.0 / std::sqrt(static_cast<double>(rank));
  for (std::size_t m = 0; m < experts; ++m) {
    LoraAdapter a;
    for (auto* p : {&a.q, &a.k, &a.v}) {
      p->a = param_normal({rank, dim}, sd, rng);
      p->b = param_const({dim, rank}, 0.0);
    }
    bank.experts.push_back(std::move(a));
  }
  return bank;
}

}  // namespace rsr::adapters
