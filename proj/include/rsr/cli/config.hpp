// SPDX-License-Identifier: Apache-2.0
//
// Flat key = value run configuration. Lines starting with '#' or ';' and
// blank lines are ignored; unknown keys and malformed values are errors that
// name the key and line.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "rsr/diffusion/data.hpp"
#include "rsr/diffusion/model.hpp"
#include "rsr/diffusion/schedule.hpp"
#include "rsr/diffusion/train.hpp"
#include "rsr/frozenlake/planner.hpp"

namespace rsr::cli {

enum class Task { Diffusion, FrozenLake };

struct RunConfig {
  Task task = Task::Diffusion;
  std::uint64_t seed = 0;
  std::string output_dir = "runs/default";

  // data and model
  diffusion::DatasetKind dataset = diffusion::DatasetKind::Shapes;
  std::size_t dataset_size = 2048;
  std::size_t image_size = 16;
  std::size_t classes = 4;
  std::size_t patch = 4;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t layers = 6;

  // recursion; the planner always has one expert per action
  bool recursion = true;
  std::size_t experts = 2;
  int latent_steps = 2;
  double tau = 5.0;
  std::size_t lora_rank = 8;
  std::vector<int> target_layers{4};
  bool remodulate_each_step = false;
  bool gate_uses_conditioning = true;

  // schedule
  int diffusion_steps = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;

  // optimisation
  int pretrain_steps = 7000;
  int finetune_steps = 3000;
  std::size_t batch_size = 8;
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.0;
  double grad_clip = 1.0;
  double balance_weight = 0.01;
  bool freeze_base = true;
  int log_every = 100;

  // sampling
  std::size_t sample_chunk = 32;

  // frozenlake
  int grid = 4;
  std::size_t cell_px = 4;
  std::size_t train_maps = 3000;
  std::size_t eval_maps = 300;
  double hole_density = 0.2;
  std::size_t max_holes = 2;
  double epsilon = 0.2;
  int planner_steps = 2500;
  std::size_t planner_batch = 16;
  double planner_lr = 1e-3;
  std::size_t planner_dim = 64;
  std::size_t planner_heads = 4;
  std::size_t encoder_layers = 3;
  std::size_t planner_rank = 16;
  std::size_t gate_hidden = 128;
  double decoder_weight = 1.0;

  bool operator==(const RunConfig&) const = default;

  /// Cross-field checks; throws ConfigError naming the offending key.
  void validate() const;

  diffusion::DitConfig dit_config() const;
  diffusion::TrainConfig train_config() const;
  diffusion::Schedule schedule() const;
  diffusion::ToyDataset dataset_for_run() const;
  frozenlake::PlannerConfig planner_config() const;
  frozenlake::PlannerTrainConfig planner_train_config() const;
};

std::string to_string(Task t);

/// Defaults overridden by the text; validated.
RunConfig parse_config(const std::string& text);
std::string serialize_config(const RunConfig& cfg);

/// Throws std::runtime_error naming the path if it cannot be read.
RunConfig load_config(const std::filesystem::path& path);

/// Default output directory: $RSR_OUTPUT_DIR when set, else `fallback`.
std::filesystem::path resolve_output_dir(const std::string& fallback);

}  // namespace rsr::cli
