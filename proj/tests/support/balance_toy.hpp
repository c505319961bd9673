// SPDX-License-Identifier: Apache-2.0
//
// A gate started near single-expert collapse and trained on the balance loss
// alone, with Gumbel noise on.

#pragma once

#include <algorithm>
#include <vector>

#include "rsr/numerics/optim.hpp"
#include "rsr/routing/routing.hpp"
#include "support/test_util.hpp"

namespace rsr::testing {

struct BalanceToyResult {
  double initial_max_frequency = 0.0;
  double final_max_frequency = 0.0;
  int steps_to_target = -1;  // first check below target, -1 if never
};

inline BalanceToyResult run_balance_toy(std::size_t experts, int max_steps, double target, std::uint64_t seed,
                                        int check_every = 100) {
  const std::size_t dim = 8, tokens = 512;
  Rng rng(seed);
  auto gate = routing::GateNetwork::init(dim, experts, rng);
  gate.mlp.fc2.bias.mutable_values()[0] = 4.0;
  const auto x = random_tensor({tokens, dim}, rng);
  const auto y = random_tensor({1, dim}, rng);
  ParamList params;
  gate.collect(params, "gate");
  set_trainable(params, true);
  AdamWConfig oc;
  oc.lr = 1e-2;
  AdamW opt(params, oc);
  Rng noise = rng.split(1);
  const double tau = 5.0;

  auto measure = [&] {
    NoGradGuard guard;
    Rng eval_noise = rng.split(2);
    routing::SelectOptions so{.training = true, .rng = &eval_noise};
    std::vector<int> all;
    for (int draw = 0; draw < 4; ++draw) {
      auto d = routing::gumbel_select(routing::gate_logits(x, y, 1, gate), tau, so);
      all.insert(all.end(), d.selected.begin(), d.selected.end());
    }
    const auto u = routing::usage(all, experts);
    return *std::max_element(u.begin(), u.end());
  };

  BalanceToyResult r;
  r.initial_max_frequency = measure();
  for (int step = 1; step <= max_steps; ++step) {
    routing::SelectOptions so{.training = true, .rng = &noise};
    auto d = routing::gumbel_select(routing::gate_logits(x, y, 1, gate), tau, so);
    backward(routing::balance_loss(d.soft_probs, d.selected));
    opt.step();
    if (step % check_every == 0) {
      r.final_max_frequency = measure();
      if (r.final_max_frequency < target) {
        r.steps_to_target = step;
        break;
      }
    }
  }
  set_trainable(params, false);
  return r;
}

}  // namespace rsr::testing
