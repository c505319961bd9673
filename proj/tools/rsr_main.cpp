// SPDX-License-Identifier: Apache-2.0
//
// rsr: train, sample, check and analyze recursive sparse diffusion models and
// the FrozenLake planner. RSR_OUTPUT_DIR overrides the default output directory.

#include <iostream>

#include "CLI11.hpp"
#include "rsr/cli/commands.hpp"

int main(int argc, char** argv) {
  using namespace rsr::cli;
  CLI::App app{"Recursive sparse reasoning for diffusion transformers"};
  app.require_subcommand(1);

  TrainArgs train;
  std::string train_out;
  auto* c_train = app.add_subcommand("train", "Train a diffusion model or planner from a config file");
  c_train->add_option("config", train.config, "Config file (key = value)")->required();
  c_train->add_option("-o,--out", train_out, "Output directory (default: config output_dir)");

  TrainArgs lake_train{.task = Task::FrozenLake};
  std::string lake_train_out;
  auto* c_ltrain = app.add_subcommand("frozenlake-train", "Train the FrozenLake planner (forces task = frozenlake)");
  c_ltrain->add_option("config", lake_train.config, "Config file (key = value)")->required();
  c_ltrain->add_option("-o,--out", lake_train_out, "Output directory");

  SampleArgs sample;
  std::string sample_out;
  int sample_latent = 0;
  auto* c_sample = app.add_subcommand("sample", "Draw class-conditional samples as PGM files");
  c_sample->add_option("checkpoint", sample.checkpoint, "Diffusion checkpoint")->required();
  c_sample->add_option("-c,--class", sample.cls, "Class id")->required();
  c_sample->add_option("-n,--n", sample.n, "Number of samples")->capture_default_str();
  c_sample->add_option("-s,--seed", sample.seed, "Sampling seed")->capture_default_str();
  auto* sample_latent_opt =
      c_sample->add_option("-t,--latent-steps", sample_latent, "Override the number of latent steps");
  c_sample->add_option("-o,--out", sample_out, "Output directory");

  GradcheckArgs grad;
  std::string corrupt;
  auto* c_grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and component");
  c_grad->add_option("-s,--seed", grad.seed, "Seed for inputs and probes")->capture_default_str();
  auto* corrupt_opt = c_grad->add_option("--corrupt", corrupt, "Perturb the backward pass of this op (test hook)");

  AnalyzeArgs analyze;
  std::string analyze_out;
  int analyze_class = 0, analyze_latent = 0;
  auto* c_an = app.add_subcommand("analyze", "Export latent trajectories (CSV) or routing statistics (JSON)");
  c_an->add_option("checkpoint", analyze.checkpoint, "Diffusion checkpoint")->required();
  c_an->add_option("-m,--mode", analyze.mode, "trajectories or routing")
      ->check(CLI::IsMember({"trajectories", "routing"}))
      ->capture_default_str();
  c_an->add_option("-n,--n", analyze.n, "Number of traced samples")->capture_default_str();
  auto* an_class_opt = c_an->add_option("-c,--class", analyze_class, "Class of every sample (default: cycle)");
  c_an->add_option("-s,--seed", analyze.seed, "Sampling seed")->capture_default_str();
  c_an->add_option("-b,--buckets", analyze.buckets, "Diffusion timestep buckets")->capture_default_str();
  auto* an_latent_opt = c_an->add_option("-t,--latent-steps", analyze_latent, "Override the number of latent steps");
  c_an->add_option("-o,--out", analyze_out, "Output directory");

  LakeGenArgs gen;
  std::string gen_out;
  auto* c_gen = app.add_subcommand("frozenlake-gen", "Generate solvable FrozenLake maps as text files");
  c_gen->add_option("--size", gen.size, "Grid size")->capture_default_str();
  c_gen->add_option("--count", gen.count, "Number of maps")->capture_default_str();
  c_gen->add_option("--density", gen.density, "Hole density in [0, 0.4]")->capture_default_str();
  c_gen->add_option("--max-holes", gen.max_holes, "Upper bound on holes per map")->capture_default_str();
  c_gen->add_option("-s,--seed", gen.seed, "Generation seed")->capture_default_str();
  c_gen->add_option("-o,--out", gen_out, "Output directory");

  LakeEvalArgs ev;
  std::string ev_out, ev_maps;
  auto* c_ev = app.add_subcommand("frozenlake-eval", "Plan on maps, decode frames, report goal rate and failures");
  c_ev->add_option("checkpoint", ev.checkpoint, "Planner checkpoint")->required();
  c_ev->add_option("--maps", ev_maps, "Directory of map text files (default: held-out maps)");
  c_ev->add_option("--limit", ev.limit, "Evaluate at most this many maps (0 = all)")->capture_default_str();
  c_ev->add_option("-o,--out", ev_out, "Output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  auto& out = std::cout;
  auto& err = std::cerr;
  if (*c_train) {
    if (!train_out.empty()) train.out = train_out;
    return cmd_train(train, out, err);
  }
  if (*c_ltrain) {
    if (!lake_train_out.empty()) lake_train.out = lake_train_out;
    return cmd_train(lake_train, out, err);
  }
  if (*c_sample) {
    if (!sample_out.empty()) sample.out = sample_out;
    if (*sample_latent_opt) sample.latent_steps = sample_latent;
    return cmd_sample(sample, out, err);
  }
  if (*c_grad) {
    if (*corrupt_opt) grad.corrupt = corrupt;
    return cmd_gradcheck(grad, out, err);
  }
  if (*c_an) {
    if (!analyze_out.empty()) analyze.out = analyze_out;
    if (*an_class_opt) analyze.cls = analyze_class;
    if (*an_latent_opt) analyze.latent_steps = analyze_latent;
    return cmd_analyze(analyze, out, err);
  }
  if (*c_gen) {
    if (!gen_out.empty()) gen.out = gen_out;
    return cmd_frozenlake_gen(gen, out, err);
  }
  if (*c_ev) {
    if (!ev_out.empty()) ev.out = ev_out;
    if (!ev_maps.empty()) ev.maps = ev_maps;
    return cmd_frozenlake_eval(ev, out, err);
  }
  return kExitUsage;
}
