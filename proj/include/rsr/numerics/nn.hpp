// SPDX-License-Identifier: Apache-2.0
//
// Parameter containers shared by every model in the project.

#pragma once

#include <string>
#include <utility>
#include <vector>

#include "rsr/numerics/rng.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr {

/// Named parameter handles in a stable order (checkpoint and optimizer order).
using ParamList = std::vector<std::pair<std::string, Tensor>>;

Tensor param_normal(Shape shape, double stddev, Rng& rng);
Tensor param_const(Shape shape, double v);

/// y = x W + b with W[in x out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when constructed without bias

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true, double gain = 1.0);
  static Linear zeros(std::size_t in, std::size_t out, bool with_bias = true);

  std::size_t in() const { return weight.rows(); }
  std::size_t out() const { return weight.cols(); }
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

/// Two-layer GELU MLP.
struct Mlp {
  Linear fc1;
  Linear fc2;

  Mlp() = default;
  Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
  void collect(ParamList& out, const std::string& prefix) const;
};

std::size_t count_params(const ParamList& params);
void zero_grads(const ParamList& params);
void set_trainable(const ParamList& params, bool on);

}  // namespace rsr
