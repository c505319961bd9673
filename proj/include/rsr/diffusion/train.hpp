// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rsr/diffusion/data.hpp"
#include "rsr/diffusion/model.hpp"
#include "rsr/diffusion/schedule.hpp"
#include "rsr/numerics/optim.hpp"

namespace rsr::diffusion {

struct TrainConfig {
  /// Base model steps with recursion disabled, then steps with adapters and
  /// gates. A model without recursive layers runs both phases on the base.
  int pretrain_steps = 7000;
  int finetune_steps = 3000;
  std::size_t batch = 8;
  AdamWConfig optim;
  double grad_clip = 1.0;  // 0 disables
  bool freeze_base_in_finetune = true;
  double balance_weight = 0.01;  // applied only when M >= 3
  std::uint64_t seed = 0;

  void validate() const;
  int total_steps() const { return pretrain_steps + finetune_steps; }
};

struct TrainRecord {
  int step = 0;  // 1-based
  std::string phase;
  double loss = 0.0;          // noise-prediction MSE
  double balance_loss = 0.0;  // 0 when inactive
  std::vector<double> expert_usage;  // routed fraction per expert this step
};

struct TrainSummary {
  std::vector<double> losses;          // per step
  std::vector<double> finetune_usage;  // routed fraction per expert over the finetune phase
  long routed_tokens = 0;
};

using TrainSink = std::function<void(const TrainRecord&)>;

/// Minimises ||eps - eps_theta(x_t, t, y)||^2 over uniformly drawn t.
/// Throws std::runtime_error if the loss becomes non-finite.
TrainSummary train(DitModel& model, const ToyDataset& data, const Schedule& schedule, const TrainConfig& cfg,
                   const TrainSink& sink = {});

/// Loss of one fixed batch without updating anything.
double evaluate_loss(const DitModel& model, const ToyDataset& data, const Schedule& schedule, std::size_t batch,
                     std::uint64_t seed, bool use_recursion);

}  // namespace rsr::diffusion
