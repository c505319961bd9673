// SPDX-License-Identifier: Apache-2.0
//
// Subcommand bodies. Each returns a process exit code and writes progress to
// `out`, diagnostics to `err`.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "rsr/cli/config.hpp"
#include "rsr/diffusion/model.hpp"
#include "rsr/frozenlake/env.hpp"
#include "rsr/frozenlake/planner.hpp"

namespace rsr::cli {

enum ExitCode : int {
  kExitOk = 0,
  kExitCheckFailed = 1,  // gradcheck breach
  kExitUsage = 2,        // bad arguments, missing or invalid config
  kExitData = 3,         // corrupt checkpoint, I/O failure, training divergence
};

struct TrainArgs {
  std::filesystem::path config;
  std::optional<std::filesystem::path> out;
  /// Set by frozenlake-train; overrides the config's task key.
  std::optional<Task> task;
};

struct SampleArgs {
  std::filesystem::path checkpoint;
  int cls = 0;
  std::size_t n = 1;
  std::uint64_t seed = 0;
  std::optional<int> latent_steps;
  std::optional<std::filesystem::path> out;
};

struct GradcheckArgs {
  std::uint64_t seed = 0;
  std::optional<std::string> corrupt;  // op whose backward is perturbed
};

struct AnalyzeArgs {
  std::filesystem::path checkpoint;
  std::string mode = "routing";  // trajectories | routing
  std::size_t n = 4;
  /// Class of every sample; unset cycles through all classes.
  std::optional<int> cls;
  std::uint64_t seed = 0;
  std::size_t buckets = 10;
  std::optional<int> latent_steps;
  std::optional<std::filesystem::path> out;
};

struct LakeGenArgs {
  int size = 4;
  std::size_t count = 100;
  double density = 0.2;
  std::size_t max_holes = 2;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> out;
};

struct LakeEvalArgs {
  std::filesystem::path checkpoint;
  /// Directory of map text files; unset evaluates the held-out maps implied
  /// by the checkpoint's config.
  std::optional<std::filesystem::path> maps;
  std::size_t limit = 0;  // 0 = all
  std::optional<std::filesystem::path> out;
};

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err);
int cmd_sample(const SampleArgs& args, std::ostream& out, std::ostream& err);
int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err);
int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err);
int cmd_frozenlake_gen(const LakeGenArgs& args, std::ostream& out, std::ostream& err);
int cmd_frozenlake_eval(const LakeEvalArgs& args, std::ostream& out, std::ostream& err);

// Pieces shared with the acceptance runner.

struct LoadedDiffusion {
  RunConfig cfg;
  diffusion::DitModel model;
};
struct LoadedPlanner {
  RunConfig cfg;
  frozenlake::Planner planner;
};

/// Throw CheckpointError on integrity problems or a task mismatch.
LoadedDiffusion load_diffusion(const std::filesystem::path& checkpoint);
LoadedPlanner load_planner(const std::filesystem::path& checkpoint);

std::uint64_t model_seed(const RunConfig& cfg);
std::vector<frozenlake::LakeMap> training_maps(const RunConfig& cfg);
/// Maps drawn from a separate stream, minus any that appear in training.
std::vector<frozenlake::LakeMap> held_out_maps(const RunConfig& cfg);
std::vector<frozenlake::Rollout> training_rollouts(const RunConfig& cfg, const std::vector<frozenlake::LakeMap>& maps);

/// Median of the first and last fifth of a loss curve.
std::pair<double, double> quintile_medians(const std::vector<double>& losses);

}  // namespace rsr::cli
