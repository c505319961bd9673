// SPDX-License-Identifier: Apache-2.0

#include "rsr/routing/routing.hpp"

#include <algorithm>
#include <stdexcept>

#include "rsr/numerics/ops.hpp"

namespace rsr::routing {

GateNetwork GateNetwork::init(std::size_t dim, std::size_t experts, Rng& rng, std::size_t hidden) {
  if (experts < 1) throw ConfigError("gate needs at least one expert");
  GateNetwork g;
  g.dim = dim;
  g.experts = experts;
  g.mlp = Mlp(dim, hidden ? hidden : dim, experts, rng);
  return g;
}

void GateNetwork::collect(ParamList& out, const std::string& prefix) const { mlp.collect(out, prefix + ".mlp"); }

Tensor gate_logits(const Tensor& x_tokens, const Tensor& y, int t_latent, const GateNetwork& gate,
                   bool with_conditioning) {
  if (t_latent < 1) throw std::invalid_argument("gate_logits: latent step must be >= 1");
  if (x_tokens.rank() != 2 || x_tokens.cols() != gate.dim) {
    throw ShapeError("gate_logits: tokens " + shape_str(x_tokens.shape()) + " vs gate width " +
                     std::to_string(gate.dim));
  }
  Tensor in = x_tokens;
  if (with_conditioning) {
    if (y.defined()) {
      if (y.rank() != 2 || y.cols() != gate.dim || x_tokens.rows() % y.rows() != 0) {
        throw ShapeError("gate_logits: conditioning " + shape_str(y.shape()) + " vs tokens " +
                         shape_str(x_tokens.shape()));
      }
      in = ops::add(in, ops::repeat_rows(y, x_tokens.rows() / y.rows()));
    }
    in = ops::add_row(in, ops::sinusoidal_embed(t_latent, gate.dim));
  }
  return gate.mlp(in);
}

RoutingDecision gumbel_select(const Tensor& logits, double tau, const SelectOptions& opt) {
  if (!(tau > 0.0)) throw std::invalid_argument("gumbel_select: temperature must be positive");
  const auto rows = logits.rows(), m = logits.cols();
  RoutingDecision d;
  d.logits = logits;
  Tensor z = logits;
  if (opt.training) {
    if (!opt.noise_override.empty()) {
      if (opt.noise_override.size() != rows * m) throw ShapeError("gumbel_select: noise override size mismatch");
      d.noise.assign(opt.noise_override.begin(), opt.noise_override.end());
    } else {
      if (!opt.rng) throw std::invalid_argument("gumbel_select: training mode needs an rng");
      d.noise.resize(rows * m);
      for (auto& g : d.noise) g = opt.rng->gumbel();
    }
    z = ops::add(logits, Tensor(logits.shape(), d.noise));
  }
  d.soft_probs = ops::softmax(ops::scale(z, 1.0 / tau), 1);

  d.selected.resize(rows);
  auto zv = z.values();
  for (std::size_t i = 0; i < rows; ++i) {
    const double* row = zv.data() + i * m;
    d.selected[i] = static_cast<int>(std::max_element(row, row + m) - row);
  }
  if (!opt.forced_selection.empty()) {
    if (opt.forced_selection.size() != rows) throw ShapeError("gumbel_select: forced selection size mismatch");
    for (std::size_t i = 0; i < rows; ++i) {
      if (opt.forced_selection[i] < 0 || static_cast<std::size_t>(opt.forced_selection[i]) >= m) {
        throw std::out_of_range("gumbel_select: forced expert out of range");
      }
      d.selected[i] = opt.forced_selection[i];
    }
  }

  if (opt.estimator == Estimator::StraightThrough && d.soft_probs.requires_grad()) {
    std::vector<double> hard(rows * m, 0.0);
    std::vector<std::size_t> picks(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      hard[i * m + d.selected[i]] = 1.0;
      picks[i] = i * m + static_cast<std::size_t>(d.selected[i]);
    }
    auto st = ops::straight_through(d.soft_probs, Tensor(logits.shape(), std::move(hard)));
    d.weights = ops::gather_rows(ops::reshape(st, {rows * m, 1}), picks);
  } else {
    d.weights = Tensor::full({rows, 1}, 1.0);
  }
  return d;
}

TokenPermutation TokenPermutation::group_by(std::span<const int> selected, std::size_t experts) {
  TokenPermutation p;
  p.group_begin.assign(experts + 1, 0);
  for (int s : selected) {
    if (s < 0 || static_cast<std::size_t>(s) >= experts) {
      throw std::out_of_range("expert id " + std::to_string(s) + " outside [0, " + std::to_string(experts) + ")");
    }
    ++p.group_begin[static_cast<std::size_t>(s) + 1];
  }
  for (std::size_t m = 0; m < experts; ++m) p.group_begin[m + 1] += p.group_begin[m];
  p.forward.resize(selected.size());
  p.inverse.resize(selected.size());
  auto cursor = p.group_begin;
  for (std::size_t i = 0; i < selected.size(); ++i) {
    const auto pos = cursor[static_cast<std::size_t>(selected[i])]++;
    p.forward[pos] = i;
    p.inverse[i] = pos;
  }
  return p;
}

Tensor dispatch_and_reassemble(const Tensor& tokens, std::span<const int> selected, std::size_t experts,
                               const ExpertFn& apply, const Tensor& weights) {
  if (selected.size() != tokens.rows()) {
    throw std::out_of_range("dispatch: " + std::to_string(selected.size()) + " decisions for " +
                            std::to_string(tokens.rows()) + " tokens");
  }
  const auto perm = TokenPermutation::group_by(selected, experts);
  auto sorted = ops::gather_rows(tokens, perm.forward);
  std::vector<Tensor> outs;
  for (std::size_t m = 0; m < experts; ++m) {
    const auto b = perm.group_begin[m], e = perm.group_begin[m + 1];
    if (b == e) continue;
    auto group = (b == 0 && e == tokens.rows()) ? sorted : ops::slice_rows(sorted, b, e);
    auto out = apply(m, group);
    if (out.rank() != 2 || out.rows() != e - b) throw ShapeError("dispatch: expert returned wrong row count");
    outs.push_back(std::move(out));
  }
  auto merged = outs.size() == 1 ? outs.front() : ops::concat_rows(outs);
  auto result = ops::gather_rows(merged, perm.inverse);
  return weights.defined() ? ops::mul_col(result, weights) : result;
}

std::vector<double> usage(std::span<const int> selected, std::size_t experts) {
  std::vector<double> f(experts, 0.0);
  for (int s : selected) f.at(static_cast<std::size_t>(s)) += 1.0;
  for (auto& x : f) x /= static_cast<double>(std::max<std::size_t>(selected.size(), 1));
  return f;
}

Tensor balance_loss(const Tensor& soft_probs, std::span<const int> selected) {
  const auto t = soft_probs.rows(), m = soft_probs.cols();
  if (selected.size() != t) throw ShapeError("balance_loss: selection count does not match rows");
  auto f = usage(selected, m);
  auto mean_p = ops::group_mean_rows(soft_probs, t);
  return ops::scale(ops::sum(ops::mul(mean_p, Tensor({1, m}, std::move(f)))), static_cast<double>(m));
}

}  // namespace rsr::routing
