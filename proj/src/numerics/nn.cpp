// SPDX-License-Identifier: Apache-2.0

#include "rsr/numerics/nn.hpp"

#include <cmath>

#include "rsr/numerics/ops.hpp"

namespace rsr {

Tensor param_normal(Shape shape, double stddev, Rng& rng) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

Tensor param_const(Shape shape, double v) { return Tensor::full(std::move(shape), v, true); }

Linear::Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias, double gain)
    : weight(param_normal({in, out}, gain / std::sqrt(static_cast<double>(in)), rng)) {
  if (with_bias) bias = param_const({out}, 0.0);
}

Linear Linear::zeros(std::size_t in, std::size_t out, bool with_bias) {
  Linear l;
  l.weight = param_const({in, out}, 0.0);
  if (with_bias) l.bias = param_const({out}, 0.0);
  return l;
}

Tensor Linear::operator()(const Tensor& x) const {
  auto y = ops::matmul(x, weight);
  return bias.defined() ? ops::add_row(y, bias) : y;
}

void Linear::collect(ParamList& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
}

Mlp::Mlp(std::size_t in, std::size_t hidden, std::size_t out, Rng& rng)
    : fc1(in, hidden, rng), fc2(hidden, out, rng) {}

Tensor Mlp::operator()(const Tensor& x) const { return fc2(ops::gelu(fc1(x))); }

void Mlp::collect(ParamList& out, const std::string& prefix) const {
  fc1.collect(out, prefix + ".fc1");
  fc2.collect(out, prefix + ".fc2");
}

std::size_t count_params(const ParamList& params) {
  std::size_t n = 0;
  for (const auto& [_, t] : params) n += t.size();
  return n;
}

void zero_grads(const ParamList& params) {
  for (const auto& [_, t] : params) t.zero_grad();
}

void set_trainable(const ParamList& params, bool on) {
  for (const auto& [_, t] : params) t.set_requires_grad(on);
}

}  // namespace rsr
