// SPDX-License-Identifier: Apache-2.0
//
// Action-aligned recursive planner: the start frame is encoded once, each
// latent step selects one of four experts (one per action) for the whole
// frame, and a small attention decoder renders every step's readout.

#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "rsr/frozenlake/env.hpp"
#include "rsr/mmdit/block.hpp"
#include "rsr/numerics/optim.hpp"
#include "rsr/recursion/recursion.hpp"

namespace rsr::frozenlake {

struct PlannerConfig {
  int grid = 4;
  RenderSpec render;
  std::size_t experts = 4;  // must equal the number of actions
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t encoder_layers = 3;
  std::size_t decoder_layers = 1;
  std::size_t lora_rank = 16;
  std::size_t gate_hidden = 128;
  double tau = 5.0;
  /// Zero W_q/W_k/W_v of the recursive block so the final latent step
  /// transforms the state like every other step.
  bool zero_base_projection = true;

  void validate() const;
  std::size_t tokens() const { return static_cast<std::size_t>(grid * grid); }
  std::size_t patch_dim() const { return render.cell_px * render.cell_px; }
  std::size_t frame_pixels() const { return tokens() * patch_dim(); }
  int step_cap() const { return 4 * grid * grid; }
};

struct Planner {
  PlannerConfig cfg;
  Linear patch_embed;
  Tensor pos;   // fixed [N x D]
  Tensor task;  // learned conditioning row [1 x D]
  std::vector<mmdit::MmditBlockParams> encoder;
  mmdit::MmditBlockParams block;
  recursion::RecursiveComponent rec;
  std::vector<mmdit::MmditBlockParams> decoder;
  Linear decoder_head;  // zero at init

  static Planner init(const PlannerConfig& cfg, std::uint64_t seed);
  ParamList params() const;
};

struct PlannerPass {
  std::vector<Tensor> logits;  // per step [B x 4]
  std::vector<std::vector<int>> selected;
  std::vector<Tensor> readouts;  // per step [B*N x D]
};

/// Runs `steps` latent steps from the start frames ([B x pixels], flattened).
/// `forced` (per step, per sample) replaces the gate's choice.
PlannerPass planner_pass(const Planner& p, const std::vector<double>& frames, std::size_t batch, int steps,
                         const std::vector<std::vector<int>>* forced);

/// Decoded frame patches [B*N x patch_dim] of one readout.
Tensor decode(const Planner& p, const Tensor& readout, std::size_t batch);

struct PlannerTrainConfig {
  int steps = 4000;
  std::size_t batch = 16;
  AdamWConfig optim;
  double decoder_weight = 1.0;
  double grad_clip = 1.0;
  /// Cosine decay from optim.lr down to lr_floor * optim.lr over `steps`.
  bool cosine_decay = true;
  double lr_floor = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
};

struct PlannerRecord {
  int step = 0;
  double loss = 0.0, gate_ce = 0.0, frame_mse = 0.0, gate_accuracy = 0.0;
};

/// Gate: cross-entropy of each step's logits against the oracle action.
/// Experts: teacher-forced with the taken actions; readout after step t is
/// decoded and compared with frame t+1.
std::vector<PlannerRecord> train_planner(Planner& p, const std::vector<Rollout>& rollouts,
                                         const PlannerTrainConfig& cfg,
                                         const std::function<void(const PlannerRecord&)>& sink = {});

struct GateEvaluation {
  double accuracy = 0.0;
  long decisions = 0;
  std::array<std::array<long, kActions>, kActions> confusion{};  // [oracle][selected]
  bool diagonal_dominant() const;
};

/// Teacher-forced along each map's oracle plan.
GateEvaluation evaluate_gate(const Planner& p, const std::vector<LakeMap>& maps);

/// Per-pixel MSE of decoded frames against the rendered ones on teacher-forced rollouts.
double evaluate_decoder(const Planner& p, const std::vector<Rollout>& rollouts);

enum class Outcome { Goal, Hole, NoPlan };
std::string to_string(Outcome o);

struct PlanResult {
  std::vector<Action> actions;
  std::vector<Pos> positions;  // environment positions, actions.size() + 1
  std::vector<std::vector<double>> frames;  // decoded frame per step
  Outcome outcome = Outcome::NoPlan;
};

/// Free-running plan: each latent step's expert is an action executed in the
/// environment; stops at the goal, a hole or the step cap.
PlanResult plan_and_decode(const Planner& p, const LakeMap& map);

struct PlanSummary {
  double goal_rate = 0.0;
  std::size_t goals = 0, holes = 0, no_plan = 0;
  std::vector<std::size_t> failures;  // map indices
};
PlanSummary summarize_plans(const std::vector<PlanResult>& results);

}  // namespace rsr::frozenlake
