// SPDX-License-Identifier: Apache-2.0

#include "rsr/cli/gradcheck_suite.hpp"

#include <functional>

#include "rsr/adapters/lora.hpp"
#include "rsr/mmdit/block.hpp"
#include "rsr/numerics/gradcheck.hpp"
#include "rsr/numerics/ops.hpp"
#include "rsr/recursion/recursion.hpp"
#include "rsr/routing/routing.hpp"

namespace rsr::cli {

namespace {

Tensor leaf(Shape shape, Rng& rng, double scale = 1.0) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return Tensor(std::move(shape), std::move(v), true);
}

std::vector<Tensor> grad_leaves(const ParamList& params) {
  std::vector<Tensor> out;
  for (const auto& [name, t] : params) {
    t.set_requires_grad(true);
    out.push_back(t);
  }
  return out;
}

}  // namespace

std::vector<GradCheckEntry> run_gradcheck_suite(std::uint64_t seed) {
  std::vector<GradCheckEntry> out;
  const Rng root(seed);
  std::uint64_t stream = 0;
  auto check = [&](const std::string& name, const std::function<Tensor()>& f, const std::vector<Tensor>& inputs) {
    const double err = probe_gradient_error(f, inputs, root.split(1000 + stream).next_u64());
    out.push_back({name, err, err < kGradCheckTolerance});
  };
  auto rng_for = [&] { return root.split(stream++); };

  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), b = leaf({4, 5}, r);
    check("matmul", [=] { return ops::matmul(a, b); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("transpose", [=] { return ops::transpose(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), b = leaf({3, 4}, r);
    check("add", [=] { return ops::add(a, b); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), b = leaf({3, 4}, r);
    check("sub", [=] { return ops::sub(a, b); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), b = leaf({3, 4}, r);
    check("mul", [=] { return ops::mul(a, b); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("scale", [=] { return ops::scale(a, -1.7); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("square", [=] { return ops::square(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), v = leaf({4}, r);
    check("add_row", [=] { return ops::add_row(a, v); }, {a, v});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), w = leaf({3, 1}, r);
    check("mul_col", [=] { return ops::mul_col(a, w); }, {a, w});
  }
  {
    Rng r = rng_for();
    auto a = leaf({2, 3}, r);
    check("repeat_rows", [=] { return ops::repeat_rows(a, 3); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({6, 3}, r);
    check("group_mean_rows", [=] { return ops::group_mean_rows(a, 3); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("reshape", [=] { return ops::reshape(a, {6, 2}); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({2, 3}, r), b = leaf({1, 3}, r);
    check("concat_rows", [=] { return ops::concat_rows({a, b}); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({2, 3}, r), b = leaf({2, 1}, r);
    check("concat_cols", [=] { return ops::concat_cols({a, b}); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto a = leaf({5, 3}, r);
    check("slice_rows", [=] { return ops::slice_rows(a, 1, 4); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 5}, r);
    check("slice_cols", [=] { return ops::slice_cols(a, 2, 5); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({4, 3}, r);
    const std::vector<std::size_t> idx{2, 0, 2, 3};
    check("gather_rows", [=] { return ops::gather_rows(a, idx); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("softmax", [=] { return ops::softmax(a, 1); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("log_softmax", [=] { return ops::log_softmax_rows(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 5}, r);
    check("layernorm", [=] { return ops::layernorm(a, 1); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("gelu", [=] { return ops::gelu(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("silu", [=] { return ops::silu(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r);
    check("sum", [=] { return ops::sum(a); }, {a});
  }
  {
    Rng r = rng_for();
    auto a = leaf({3, 4}, r), b = leaf({3, 4}, r);
    check("mse", [=] { return ops::mse(a, b); }, {a, b});
  }
  {
    Rng r = rng_for();
    auto soft = leaf({3, 2}, r);
    Tensor hard({3, 2}, {1, 0, 0, 1, 1, 0});
    // The forward value ignores `soft`; its gradient must equal that of the
    // identity on `soft`, so the reference is finite differences of `soft`.
    const auto probe = root.split(1000 + stream).next_u64();
    Rng pr(probe);
    std::vector<double> w(6);
    for (auto& v : w) v = pr.normal();
    const Tensor weights({3, 2}, w);
    soft.zero_grad();
    backward(ops::sum(ops::mul(ops::straight_through(soft, hard), weights)));
    auto analytic = soft.grad_tensor();
    auto numeric = finite_diff_grad([&](const Tensor& s) { return ops::sum(ops::mul(s, weights)); }, soft, 1e-5);
    soft.zero_grad();
    const double err = max_relative_error(analytic.values(), numeric.values());
    out.push_back({"straight_through", err, err < kGradCheckTolerance});
  }
  {
    Rng r = rng_for();
    auto q = leaf({6, 4}, r), k = leaf({6, 4}, r), v = leaf({6, 4}, r);
    check("attention", [=] { return ops::attention(q, k, v, 2, 2, 0.5); }, {q, k, v});
  }

  {
    Rng r = rng_for();
    auto block = mmdit::MmditBlockParams::init(8, 2, true, r, false);
    auto x = leaf({2 * 3, 8}, r), c = leaf({2 * 2, 8}, r), y = leaf({2, 8}, r);
    ParamList params;
    block.collect(params, "block");
    auto inputs = grad_leaves(params);
    inputs.insert(inputs.begin(), {x, c, y});
    check("mmdit-block", [=] {
      auto s = mmdit::block_forward(x, c, y, block);
      return ops::concat_rows({s.x, s.c});
    }, inputs);
  }
  {
    Rng r = rng_for();
    auto bank = adapters::init_expert_bank(2, 3, 8, r);
    for (auto& e : bank.experts)
      for (auto* p : {&e.q, &e.k, &e.v}) p->b = leaf(p->b.shape(), r, 0.3);
    auto x = leaf({4, 8}, r);
    ParamList params;
    bank.collect(params, "bank");
    auto inputs = grad_leaves(params);
    inputs.insert(inputs.begin(), x);
    check("adapters", [=] {
      return ops::concat_cols({adapters::lora_apply_qkv(bank.experts[0], x), adapters::lora_apply_qkv(bank.experts[1], x)});
    }, inputs);
  }
  {
    Rng r = rng_for();
    auto gate = routing::GateNetwork::init(8, 3, r);
    auto x = leaf({4, 8}, r), y = leaf({2, 8}, r);
    std::vector<double> noise(4 * 3);
    for (auto& g : noise) g = r.gumbel();
    ParamList params;
    gate.collect(params, "gate");
    auto inputs = grad_leaves(params);
    inputs.insert(inputs.begin(), {x, y});
    check("routing-soft", [=] {
      routing::SelectOptions opt;
      opt.training = true;
      opt.noise_override = noise;
      return routing::gumbel_select(routing::gate_logits(x, y, 1, gate), 0.8, opt).soft_probs;
    }, inputs);
  }
  {
    Rng r = rng_for();
    recursion::RecursionConfig cfg;
    cfg.experts = 2;
    cfg.latent_steps = 2;
    cfg.lora_rank = 4;
    auto block = mmdit::MmditBlockParams::init(8, 2, true, r, false);
    auto comp = recursion::RecursiveComponent::init(cfg, 8, r);
    for (auto& e : comp.bank.experts)
      for (auto* p : {&e.q, &e.k, &e.v}) p->b = leaf(p->b.shape(), r, 0.3);
    auto x = leaf({2 * 3, 8}, r), c = leaf({2 * 2, 8}, r), y = leaf({2, 8}, r);
    std::vector<std::vector<double>> noise(2, std::vector<double>(6 * 2));
    for (auto& n : noise)
      for (auto& g : n) g = r.gumbel();
    ParamList params;
    block.collect(params, "block");
    comp.bank.collect(params, "bank");
    auto inputs = grad_leaves(params);
    inputs.insert(inputs.begin(), {x, c, y});
    check("recursion(M=2,T_latent=2)", [=] {
      recursion::RoutingControl ctl;
      ctl.training = true;
      ctl.estimator = routing::Estimator::Detached;
      ctl.noise = &noise;
      auto s = recursion::recursive_block_forward(x, c, y, block, comp, cfg, ctl).out;
      return ops::concat_rows({s.x, s.c});
    }, inputs);
  }
  return out;
}

}  // namespace rsr::cli
