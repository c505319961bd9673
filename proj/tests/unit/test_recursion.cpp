// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "rsr/recursion/recursion.hpp"
#include "support/plain_block.hpp"
#include "support/recursion_fixture.hpp"
#include "support/test_util.hpp"

using namespace rsr;
using recursion::RecursionConfig;
using recursion::RoutingControl;
using rsr::testing::bit_equal;
using rsr::testing::grad_check;
using rsr::testing::max_abs_diff;
using rsr::testing::random_tensor;

namespace {

using rsr::testing::Fixture;
using rsr::testing::merged;
using rsr::testing::randomize_b;

plain::Mat lora_rows(const adapters::LowRankPair& p, const plain::Mat& x) {
  return plain::matmul(plain::matmul(x, plain::transpose(plain::from(p.a))), plain::transpose(plain::from(p.b)));
}

}  // namespace

TEST(RecursionConfig, Validation) {
  RecursionConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  cfg.latent_steps = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.experts = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = {};
  cfg.tau = 0.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Recursion, BankConfigMismatchThrows) {
  Fixture f(2, 2, 8, 2, 1, 3, 2, 1);
  auto cfg = f.cfg;
  cfg.experts = 3;
  EXPECT_THROW(recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, cfg, {}), ConfigError);
}

TEST(Recursion, SingleExpertSingleStepIsPlainLora) {
  for (int trial = 0; trial < 20; ++trial) {
    Fixture f(1, 1, 8, 2, 2, 3, 2, 100 + static_cast<std::uint64_t>(trial));
    auto r = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {});
    auto ref = rsr::testing::lora_attention_reference(f, 2);
    EXPECT_LT(max_abs_diff(r.out.x.values(), ref.x.values()), 1e-12);
    EXPECT_LT(max_abs_diff(r.out.c.values(), ref.c.values()), 1e-12);
  }
}

TEST(Recursion, FreshBankCollapsesToBaseBlock) {
  for (std::size_t m : {1u, 2u, 5u}) {
    for (int t : {1, 2, 5}) {
      Fixture f(m, t, 8, 2, 2, 4, 2, 7 * m + static_cast<std::size_t>(t), false);
      Rng noise(3);
      RoutingControl ctl;
      ctl.training = true;
      ctl.rng = &noise;
      auto r = recursion::recursive_block_forward(f.x, f.c, f.y, f.block, f.comp, f.cfg, ctl);
      auto base = mmdit::block_forward(f.x, f.c, f.y, f.block);
      EXPECT_TRUE(bit_equal(r.out.x.values(), base.x.values())) << m << "x" << t;
      EXPECT_TRUE(bit_equal(r.out.c.values(), base.c.values())) << m << "x" << t;
    }
  }
}

TEST(Recursion, FreshBankCollapseWithoutText) {
  Fixture f(2, 3, 8, 2, 3, 4, 0, 44, false);
  auto r = recursion::recursive_block_forward(f.x, Tensor(), f.y, f.block, f.comp, f.cfg, {});
  auto base = mmdit::block_forward(f.x, Tensor(), f.y, f.block);
  EXPECT_TRUE(bit_equal(r.out.x.values(), base.x.values()));
}

TEST(Recursion, TwoStepMatchesManualUnroll) {
  Fixture f(2, 2, 4, 1, 1, 2, 1, 55);
  const std::vector<std::vector<int>> forced{{1, 0}, {0, 0}};
  RoutingControl ctl;
  ctl.forced = &forced;
  recursion::RecursionTrace trace;
  auto r = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, ctl, &trace);

  const auto& p = f.block;
  const auto& bank = f.comp.bank;
  auto mx = plain::modulation(p.vision, plain::from(f.y));
  auto mc = plain::modulation(*p.text, plain::from(f.y));
  auto xt = plain::affine(plain::layernorm(plain::from(f.x), p.ln_eps), mx.alpha, mx.beta);
  auto ct = plain::affine(plain::layernorm(plain::from(f.c), p.ln_eps), mc.alpha, mc.beta);
  auto cq = plain::matmul(ct, plain::from(p.text->wq));
  auto ck = plain::matmul(ct, plain::from(p.text->wk));
  auto cv = plain::matmul(ct, plain::from(p.text->wv));
  const double scale = 1.0 / std::sqrt(4.0);

  auto step = [&](const plain::Mat& state, const std::vector<int>& sel, bool final, plain::Mat& text_out) {
    plain::Mat q = cq, k = ck, v = cv;
    for (std::size_t i = 0; i < state.size(); ++i) {
      const auto& e = bank.experts[static_cast<std::size_t>(sel[i])];
      plain::Mat row{state[i]};
      auto dq = lora_rows(e.q, row), dk = lora_rows(e.k, row), dv = lora_rows(e.v, row);
      if (final) {
        plain::Mat base_in{xt[i]};
        dq = plain::add(dq, plain::matmul(base_in, plain::from(p.vision.wq)));
        dk = plain::add(dk, plain::matmul(base_in, plain::from(p.vision.wk)));
        dv = plain::add(dv, plain::matmul(base_in, plain::from(p.vision.wv)));
      }
      q.push_back(dq[0]);
      k.push_back(dk[0]);
      v.push_back(dv[0]);
    }
    auto a = plain::attention(q, k, v, 1, scale);
    text_out = plain::Mat(a.begin(), a.begin() + 1);
    return plain::Mat(a.begin() + 1, a.end());
  };

  plain::Mat text_out;
  auto a1 = step(xt, forced[0], false, text_out);
  auto s1 = plain::add(a1, xt);
  auto a2 = step(s1, forced[1], true, text_out);
  auto ox = plain::gated(plain::from(f.x), mx.gamma, plain::matmul(a2, plain::from(p.vision.wo)));
  auto oc = plain::gated(plain::from(f.c), mc.gamma, plain::matmul(text_out, plain::from(p.text->wo)));

  EXPECT_LT(max_abs_diff(r.out.x.values(), plain::flat(ox)), 1e-10);
  EXPECT_LT(max_abs_diff(r.out.c.values(), plain::flat(oc)), 1e-10);
  ASSERT_EQ(trace.steps.size(), 2u);
  EXPECT_EQ(trace.steps[0].selected, forced[0]);
  EXPECT_LT(max_abs_diff(trace.steps[0].attn_out, plain::flat(a1)), 1e-10);
  EXPECT_LT(max_abs_diff(trace.steps[0].state, plain::flat(s1)), 1e-10);
}

TEST(Recursion, StructuralCounters) {
  for (std::size_t m : {1u, 2u, 5u}) {
    for (int t : {1, 2, 5}) {
      Fixture f(m, t, 8, 2, 2, 3, 2, 11 * m + static_cast<std::size_t>(t));
      recursion::Counters n;
      recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {}, nullptr, &n);
      EXPECT_EQ(n.adapter_steps, t);
      EXPECT_EQ(n.adapter_token_calls, static_cast<long>(t) * 6);
      EXPECT_EQ(n.base_projection_calls, 1);
      EXPECT_EQ(n.residual_adds, t - 1);
      EXPECT_EQ(n.context_projection_calls, 1);
    }
  }
}

TEST(Recursion, IntermediateStateIsAttentionPlusModulatedInput) {
  Fixture f(2, 4, 8, 2, 2, 3, 2, 66);
  recursion::RecursionTrace trace;
  recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {}, &trace);
  ASSERT_EQ(trace.steps.size(), 4u);
  for (std::size_t s = 0; s + 1 < trace.steps.size(); ++s) {
    const auto& st = trace.steps[s];
    for (std::size_t i = 0; i < st.state.size(); ++i) {
      EXPECT_EQ(st.state[i], st.attn_out[i] + trace.modulated_input[i]);
    }
  }
  EXPECT_TRUE(bit_equal(trace.steps.back().state, trace.steps.back().attn_out));
}

TEST(Recursion, TracingDoesNotPerturbOutputs) {
  Fixture f(2, 5, 8, 2, 2, 4, 2, 77);
  Rng n1(9), n2(9);
  RoutingControl c1, c2;
  c1.training = c2.training = true;
  c1.rng = &n1;
  c2.rng = &n2;
  recursion::RecursionTrace trace;
  auto with = recursion::recursive_block_forward(f.x, f.c, f.y, f.block, f.comp, f.cfg, c1, &trace);
  auto without = recursion::recursive_block_forward(f.x, f.c, f.y, f.block, f.comp, f.cfg, c2);
  EXPECT_TRUE(bit_equal(with.out.x.values(), without.out.x.values()));
  EXPECT_TRUE(bit_equal(with.out.c.values(), without.out.c.values()));
  ASSERT_EQ(trace.steps.size(), 5u);
  for (const auto& s : trace.steps) {
    EXPECT_EQ(s.selected.size(), 8u);
    for (int e : s.selected) EXPECT_TRUE(e == 0 || e == 1);
  }
}

TEST(Recursion, InferenceIsDeterministic) {
  Fixture f(5, 3, 8, 2, 2, 4, 2, 78);
  auto a = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {});
  auto b = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {});
  EXPECT_TRUE(bit_equal(a.out.x.values(), b.out.x.values()));
  for (std::size_t s = 0; s < 3; ++s) EXPECT_EQ(a.decisions[s].selected, b.decisions[s].selected);
}

TEST(Recursion, GradientsReachOnlySelectedExperts) {
  Fixture f(5, 2, 8, 2, 1, 3, 2, 88);
  const std::vector<std::vector<int>> forced{{0, 2, 0}, {2, 2, 0}};
  RoutingControl ctl;
  ctl.forced = &forced;
  ParamList params;
  f.comp.bank.collect(params, "bank");
  set_trainable(params, true);
  auto r = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, ctl);
  backward(ops::sum(ops::square(r.out.x)));
  for (std::size_t m = 0; m < 5; ++m) {
    const auto& e = f.comp.bank.experts[m];
    double norm = 0.0;
    for (const auto* p : {&e.q, &e.k, &e.v}) {
      if (!p->a.has_grad()) continue;
      for (double g : p->a.grad()) norm += g * g;
      for (double g : p->b.grad()) norm += g * g;
    }
    if (m == 0 || m == 2) {
      EXPECT_GT(norm, 0.0) << "expert " << m;
    } else {
      EXPECT_EQ(norm, 0.0) << "expert " << m;
    }
  }
}

TEST(Recursion, StraightThroughFeedsGate) {
  Fixture f(2, 2, 8, 2, 1, 4, 2, 89);
  Rng noise(1);
  RoutingControl ctl;
  ctl.training = true;
  ctl.rng = &noise;
  ParamList gate;
  f.comp.gate.collect(gate, "gate");
  set_trainable(gate, true);
  auto r = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, ctl);
  backward(ops::sum(ops::square(r.out.x)));
  double norm = 0.0;
  for (auto& [name, t] : gate)
    if (t.has_grad())
      for (double g : t.grad()) norm += g * g;
  EXPECT_GT(norm, 0.0);
}

TEST(Recursion, TokenPermutationConsistency) {
  Fixture f(2, 3, 8, 2, 1, 5, 2, 90);
  const std::vector<std::size_t> perm{2, 4, 0, 3, 1};
  std::vector<std::size_t> inv(5);
  for (std::size_t i = 0; i < 5; ++i) inv[perm[i]] = i;
  Rng rng(5);
  std::vector<std::vector<double>> noise(3), shuffled(3);
  for (auto& n : noise) {
    n.resize(10);
    for (auto& g : n) g = rng.gumbel();
  }
  for (std::size_t s = 0; s < 3; ++s) {
    shuffled[s].resize(10);
    for (std::size_t i = 0; i < 5; ++i)
      for (std::size_t m = 0; m < 2; ++m) shuffled[s][i * 2 + m] = noise[s][perm[i] * 2 + m];
  }
  RoutingControl a, b;
  a.training = b.training = true;
  a.noise = &noise;
  b.noise = &shuffled;
  auto ref = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, a);
  auto got = recursion::recursive_attention(ops::gather_rows(f.x, perm), f.c, f.y, f.block, f.comp, f.cfg, b);
  EXPECT_LT(max_abs_diff(ops::gather_rows(got.out.x, inv).values(), ref.out.x.values()), 1e-12);
  EXPECT_LT(max_abs_diff(got.out.c.values(), ref.out.c.values()), 1e-12);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t i = 0; i < 5; ++i) EXPECT_EQ(got.decisions[s].selected[inv[i]], ref.decisions[s].selected[i]);
}

TEST(Recursion, PerSampleRoutingSharesOneExpert) {
  Fixture f(4, 3, 8, 2, 3, 4, 0, 91);
  f.cfg.granularity = recursion::Granularity::PerSample;
  recursion::RecursionTrace trace;
  auto r = recursion::recursive_attention(f.x, Tensor(), f.y, f.block, f.comp, f.cfg, {}, &trace);
  EXPECT_TRUE(trace.per_sample);
  for (const auto& d : r.decisions) EXPECT_EQ(d.selected.size(), 3u);
}

TEST(Recursion, RemodulateFlagChangesOutputs) {
  Fixture f(2, 3, 8, 2, 1, 4, 2, 92);
  auto a = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {});
  f.cfg.remodulate_each_step = true;
  auto b = recursion::recursive_attention(f.x, f.c, f.y, f.block, f.comp, f.cfg, {});
  EXPECT_GT(max_abs_diff(a.out.x.values(), b.out.x.values()), 1e-9);
}

TEST(Recursion, GradientsMatchFiniteDifferences) {
  Fixture f(2, 2, 8, 2, 1, 3, 2, 93);
  Rng rng(4);
  std::vector<std::vector<double>> noise(2, std::vector<double>(6));
  for (auto& n : noise)
    for (auto& g : n) g = rng.gumbel();
  RoutingControl ctl;
  ctl.training = true;
  ctl.estimator = routing::Estimator::Detached;
  ctl.noise = &noise;
  auto x = f.x.detach(), c = f.c.detach(), y = f.y.detach();
  for (auto* t : {&x, &c, &y}) t->set_requires_grad(true);
  ParamList params;
  f.block.collect(params, "blk");
  f.comp.bank.collect(params, "bank");
  std::vector<Tensor> inputs{x, c, y};
  for (auto& [name, t] : params) {
    t.set_requires_grad(true);
    inputs.push_back(t);
  }
  auto run = [&] { return recursion::recursive_block_forward(x, c, y, f.block, f.comp, f.cfg, ctl); };
  EXPECT_LT(grad_check([&] { return run().out.x; }, inputs), 1e-4);
  EXPECT_LT(grad_check([&] { return run().out.c; }, inputs), 1e-4);
}
