// SPDX-License-Identifier: Apache-2.0

#include "rsr/cli/commands.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <set>
#include <sstream>

#include "json.hpp"

#include "rsr/analysis/export.hpp"
#include "rsr/cli/checkpoint.hpp"
#include "rsr/cli/gradcheck_suite.hpp"
#include "rsr/cli/image_io.hpp"
#include "rsr/diffusion/sample.hpp"
#include "rsr/diffusion/train.hpp"
#include "rsr/numerics/rng.hpp"

namespace rsr::cli {

namespace fs = std::filesystem;
using ojson = nlohmann::ordered_json;

namespace {

constexpr const char* kDiffusionCheckpoint = "model.ckpt";
constexpr const char* kPlannerCheckpoint = "planner.ckpt";

std::string numbered(const char* stem, std::size_t i, int width, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s%0*zu%s", stem, width, i, ext);
  return buf;
}

// Maps exceptions to exit codes; the message goes to `err` as-is.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const CheckpointError& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

std::string ndjson_line(const ojson& j) { return j.dump() + "\n"; }

int train_diffusion(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto data = cfg.dataset_for_run();
  const auto schedule = cfg.schedule();
  auto model = diffusion::DitModel::init(cfg.dit_config(), model_seed(cfg));
  const auto tcfg = cfg.train_config();
  const int total = tcfg.total_steps();

  std::string log;
  auto summary = diffusion::train(model, data, schedule, tcfg, [&](const diffusion::TrainRecord& r) {
    const bool phase_end = r.step == cfg.pretrain_steps || r.step == total;
    if (r.step % cfg.log_every != 0 && !phase_end && r.step != 1) return;
    ojson j;
    j["step"] = r.step;
    j["phase"] = r.phase;
    j["loss"] = r.loss;
    j["balance_loss"] = r.balance_loss;
    j["expert_usage"] = r.expert_usage;
    log += ndjson_line(j);
    out << r.phase << " step " << r.step << "/" << total << " loss " << std::setprecision(6) << r.loss << "\n";
  });

  const auto [q1, q5] = quintile_medians(summary.losses);
  ojson s;
  s["task"] = "diffusion";
  s["steps"] = total;
  s["final_loss"] = summary.losses.empty() ? 0.0 : summary.losses.back();
  s["first_quintile_median"] = q1;
  s["last_quintile_median"] = q5;
  s["finetune_usage"] = summary.finetune_usage;
  s["routed_tokens"] = summary.routed_tokens;

  const auto text = serialize_config(cfg);
  analysis::write_text_file(dir / "config.ini", text);
  analysis::write_text_file(dir / "train_log.ndjson", log);
  analysis::write_text_file(dir / "summary.json", s.dump(2) + "\n");
  save_checkpoint(dir / kDiffusionCheckpoint, text, model.all_params());
  out << "wrote " << (dir / kDiffusionCheckpoint).string() << "\n";
  return kExitOk;
}

int train_frozenlake(const RunConfig& cfg, const fs::path& dir, std::ostream& out) {
  const auto maps = training_maps(cfg);
  const auto rollouts = training_rollouts(cfg, maps);
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    if (auto why = frozenlake::validate_rollout(rollouts[i]); !why.empty())
      throw std::runtime_error("training rollout " + std::to_string(i) + " failed the BFS check: " + why);
  }
  out << "validated " << rollouts.size() << " rollouts against BFS\n";

  auto planner = frozenlake::Planner::init(cfg.planner_config(), model_seed(cfg));
  const auto tcfg = cfg.planner_train_config();
  std::string log;
  const auto records = frozenlake::train_planner(planner, rollouts, tcfg, [&](const frozenlake::PlannerRecord& r) {
    if (r.step % cfg.log_every != 0 && r.step != tcfg.steps && r.step != 1) return;
    ojson j;
    j["step"] = r.step;
    j["loss"] = r.loss;
    j["gate_ce"] = r.gate_ce;
    j["frame_mse"] = r.frame_mse;
    j["gate_accuracy"] = r.gate_accuracy;
    log += ndjson_line(j);
    out << "planner step " << r.step << "/" << tcfg.steps << " ce " << std::setprecision(4) << r.gate_ce << " acc "
        << r.gate_accuracy << "\n";
  });

  std::size_t labels = 0;
  for (const auto& r : rollouts) labels += r.oracle.size();
  ojson s;
  s["task"] = "frozenlake";
  s["steps"] = tcfg.steps;
  s["training_maps"] = maps.size();
  s["validated_labels"] = labels;
  s["final_loss"] = records.empty() ? 0.0 : records.back().loss;

  const auto text = serialize_config(cfg);
  analysis::write_text_file(dir / "config.ini", text);
  analysis::write_text_file(dir / "train_log.ndjson", log);
  analysis::write_text_file(dir / "summary.json", s.dump(2) + "\n");
  save_checkpoint(dir / kPlannerCheckpoint, text, planner.params());
  out << "wrote " << (dir / kPlannerCheckpoint).string() << "\n";
  return kExitOk;
}

std::vector<int> sample_labels(std::size_t n, std::optional<int> cls, std::size_t classes) {
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = cls ? *cls : static_cast<int>(i % classes);
  return labels;
}

bool valid_class(int cls, std::size_t classes) { return cls >= 0 && static_cast<std::size_t>(cls) < classes; }

}  // namespace

std::uint64_t model_seed(const RunConfig& cfg) { return Rng(cfg.seed).split(1).next_u64(); }

std::vector<frozenlake::LakeMap> training_maps(const RunConfig& cfg) {
  return frozenlake::generate_maps(cfg.grid, cfg.train_maps, cfg.hole_density, Rng(cfg.seed).split(21).next_u64(),
                                   cfg.max_holes);
}

std::vector<frozenlake::LakeMap> held_out_maps(const RunConfig& cfg) {
  std::set<std::string> seen;
  for (const auto& m : training_maps(cfg)) seen.insert(m.to_text());
  std::vector<frozenlake::LakeMap> out;
  for (auto& m : frozenlake::generate_maps(cfg.grid, cfg.eval_maps, cfg.hole_density,
                                           Rng(cfg.seed).split(22).next_u64(), cfg.max_holes))
    if (!seen.count(m.to_text())) out.push_back(std::move(m));
  return out;
}

std::vector<frozenlake::Rollout> training_rollouts(const RunConfig& cfg, const std::vector<frozenlake::LakeMap>& maps) {
  const Rng root = Rng(cfg.seed).split(23);
  frozenlake::RenderSpec spec;
  spec.cell_px = cfg.cell_px;
  std::vector<frozenlake::Rollout> out;
  out.reserve(maps.size());
  const auto cap = static_cast<std::size_t>(4 * cfg.grid * cfg.grid);
  for (std::size_t i = 0; i < maps.size(); ++i)
    out.push_back(frozenlake::make_rollout(maps[i], cfg.epsilon, root.split(i).next_u64(), cap, spec));
  return out;
}

std::pair<double, double> quintile_medians(const std::vector<double>& losses) {
  if (losses.size() < 5) return {0.0, 0.0};
  const auto fifth = losses.size() / 5;
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const auto n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  return {median({losses.begin(), losses.begin() + static_cast<std::ptrdiff_t>(fifth)}),
          median({losses.end() - static_cast<std::ptrdiff_t>(fifth), losses.end()})};
}

LoadedDiffusion load_diffusion(const fs::path& checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  RunConfig cfg;
  try {
    cfg = parse_config(ck.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + checkpoint.string() + " carries an invalid config: " + e.what());
  }
  if (cfg.task != Task::Diffusion) throw CheckpointError(checkpoint.string() + " is not a diffusion checkpoint");
  auto model = diffusion::DitModel::init(cfg.dit_config(), model_seed(cfg));
  apply_checkpoint(ck, model.all_params());
  return {cfg, std::move(model)};
}

LoadedPlanner load_planner(const fs::path& checkpoint) {
  const auto ck = load_checkpoint(checkpoint);
  RunConfig cfg;
  try {
    cfg = parse_config(ck.config_text);
  } catch (const ConfigError& e) {
    throw CheckpointError("checkpoint " + checkpoint.string() + " carries an invalid config: " + e.what());
  }
  if (cfg.task != Task::FrozenLake) throw CheckpointError(checkpoint.string() + " is not a frozenlake checkpoint");
  auto planner = frozenlake::Planner::init(cfg.planner_config(), model_seed(cfg));
  apply_checkpoint(ck, planner.params());
  return {cfg, std::move(planner)};
}

int cmd_train(const TrainArgs& args, std::ostream& out, std::ostream& err) {
  if (!fs::exists(args.config)) {
    err << "error: config file not found: " << args.config.string() << "\n";
    return kExitUsage;
  }
  return guarded(err, [&] {
    RunConfig cfg;
    try {
      cfg = load_config(args.config);
    } catch (const ConfigError& e) {
      throw ConfigError(args.config.string() + ": " + e.what());
    }
    if (args.task) {
      cfg.task = *args.task;
      cfg.validate();
    }
    const fs::path dir = args.out ? *args.out : resolve_output_dir(cfg.output_dir);
    out << "task " << to_string(cfg.task) << ", output " << dir.string() << "\n";
    return cfg.task == Task::Diffusion ? train_diffusion(cfg, dir, out) : train_frozenlake(cfg, dir, out);
  });
}

int cmd_sample(const SampleArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.n == 0) throw ConfigError("--n must be positive");
    if (args.latent_steps && *args.latent_steps < 1) throw ConfigError("--latent-steps must be at least 1");
    auto loaded = load_diffusion(args.checkpoint);
    const auto& cfg = loaded.cfg;
    if (!valid_class(args.cls, cfg.classes))
      throw ConfigError("invalid class " + std::to_string(args.cls) + ", model has classes 0.." +
                        std::to_string(cfg.classes - 1));
    const auto labels = sample_labels(args.n, args.cls, cfg.classes);
    diffusion::SampleOptions opt;
    opt.seed = args.seed;
    opt.latent_steps = args.latent_steps;
    opt.chunk = cfg.sample_chunk;
    const auto images = diffusion::sample(loaded.model, cfg.schedule(), labels, opt);

    const fs::path dir = args.out ? *args.out : resolve_output_dir("runs/samples");
    const auto px = cfg.image_size * cfg.image_size;
    ojson files = ojson::array();
    for (std::size_t i = 0; i < args.n; ++i) {
      const auto name = numbered("sample_", i, 4, ".pgm");
      write_pgm(dir / name, std::span(images).subspan(i * px, px), cfg.image_size, cfg.image_size);
      files.push_back(name);
    }
    ojson m;
    m["checkpoint"] = args.checkpoint.filename().string();
    m["class"] = args.cls;
    m["n"] = args.n;
    m["seed"] = args.seed;
    m["latent_steps"] = args.latent_steps ? *args.latent_steps : cfg.latent_steps;
    m["height"] = cfg.image_size;
    m["width"] = cfg.image_size;
    m["files"] = files;
    analysis::write_text_file(dir / "manifest.json", m.dump(2) + "\n");
    out << "wrote " << args.n << " samples to " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_gradcheck(const GradcheckArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    struct Reset {
      ~Reset() { debug::clear_backward_fault(); }
    } reset;
    if (args.corrupt) debug::inject_backward_fault(*args.corrupt);
    const auto entries = run_gradcheck_suite(args.seed);
    bool ok = true;
    for (const auto& e : entries) {
      char line[128];
      std::snprintf(line, sizeof line, "%-20s max_rel_err=%.3e  %s\n", e.name.c_str(), e.max_relative_error,
                    e.passed ? "ok" : "FAIL");
      out << line;
      if (!e.passed) {
        ok = false;
        err << "gradient check failed for " << e.name << "\n";
      }
    }
    out << (ok ? "all gradients within 1e-4\n" : "gradient check FAILED\n");
    return ok ? kExitOk : kExitCheckFailed;
  });
}

int cmd_analyze(const AnalyzeArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.mode != "trajectories" && args.mode != "routing")
      throw ConfigError("--mode must be trajectories or routing, got '" + args.mode + "'");
    if (args.n == 0) throw ConfigError("--n must be positive");
    if (args.latent_steps && *args.latent_steps < 1) throw ConfigError("--latent-steps must be at least 1");
    auto loaded = load_diffusion(args.checkpoint);
    const auto& cfg = loaded.cfg;
    if (!cfg.recursion) throw ConfigError("checkpoint has recursion disabled; nothing to analyze");
    if (args.cls && !valid_class(*args.cls, cfg.classes))
      throw ConfigError("invalid class " + std::to_string(*args.cls));
    const auto labels = sample_labels(args.n, args.cls, cfg.classes);
    const fs::path dir = args.out ? *args.out : resolve_output_dir("runs/analysis");

    diffusion::SampleOptions opt;
    opt.seed = args.seed;
    opt.latent_steps = args.latent_steps;
    opt.chunk = cfg.sample_chunk;
    const int steps = args.latent_steps ? *args.latent_steps : cfg.latent_steps;

    if (args.mode == "trajectories") {
      analysis::TrajectoryRecorder rec;
      opt.trace = [&](std::size_t offset, int, std::size_t layer, recursion::RecursionTrace& tr) {
        rec.add(offset, layer, tr);
      };
      diffusion::sample(loaded.model, cfg.schedule(), labels, opt);
      const auto records = rec.records();
      analysis::export_trajectories(records, dir / "trajectories.csv");
      out << "wrote " << records.size() << " trajectory rows to " << (dir / "trajectories.csv").string() << "\n";
    } else {
      analysis::RoutingStats stats(cfg.experts, steps, cfg.diffusion_steps, args.buckets);
      opt.trace = [&](std::size_t, int, std::size_t, recursion::RecursionTrace& tr) { stats.add(tr); };
      diffusion::sample(loaded.model, cfg.schedule(), labels, opt);
      analysis::export_routing_stats(stats, dir / "routing.json");
      out << "wrote routing statistics over " << stats.routed() << " decisions to "
          << (dir / "routing.json").string() << "\n";
    }
    return kExitOk;
  });
}

int cmd_frozenlake_gen(const LakeGenArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    if (args.count == 0) throw ConfigError("--count must be positive");
    const auto maps = frozenlake::generate_maps(args.size, args.count, args.density, args.seed, args.max_holes);
    const fs::path dir = args.out ? *args.out : resolve_output_dir("runs/maps");
    for (std::size_t i = 0; i < maps.size(); ++i)
      analysis::write_text_file(dir / numbered("map_", i, 4, ".txt"), maps[i].to_text());
    out << "wrote " << maps.size() << " maps to " << dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_frozenlake_eval(const LakeEvalArgs& args, std::ostream& out, std::ostream& err) {
  return guarded(err, [&] {
    const auto loaded = load_planner(args.checkpoint);
    const auto& cfg = loaded.cfg;
    const auto& planner = loaded.planner;

    std::vector<frozenlake::LakeMap> maps;
    std::vector<std::string> names;
    if (args.maps) {
      if (!fs::is_directory(*args.maps)) throw ConfigError("--maps is not a directory: " + args.maps->string());
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(*args.maps))
        if (e.path().extension() == ".txt") files.push_back(e.path());
      std::sort(files.begin(), files.end());
      for (const auto& f : files) {
        std::ifstream in(f, std::ios::binary);
        std::ostringstream s;
        s << in.rdbuf();
        try {
          maps.push_back(frozenlake::LakeMap::from_text(s.str()));
        } catch (const std::invalid_argument& e) {
          throw ConfigError(f.string() + ": " + e.what());
        }
        if (maps.back().size != cfg.grid)
          throw ConfigError(f.string() + ": map size " + std::to_string(maps.back().size) + " does not match planner grid " +
                            std::to_string(cfg.grid));
        names.push_back(f.stem().string());
      }
    } else {
      maps = held_out_maps(cfg);
      for (std::size_t i = 0; i < maps.size(); ++i) names.push_back(numbered("map_", i, 4, ""));
    }
    if (args.limit > 0 && maps.size() > args.limit) {
      maps.resize(args.limit);
      names.resize(args.limit);
    }
    if (maps.empty()) throw ConfigError("no maps to evaluate");
    std::vector<frozenlake::LakeMap> solvable;
    for (const auto& m : maps)
      if (frozenlake::solvable(m)) solvable.push_back(m);

    const fs::path dir = args.out ? *args.out : resolve_output_dir("runs/frozenlake-eval");
    const auto side = static_cast<std::size_t>(cfg.grid) * cfg.cell_px;
    std::vector<frozenlake::PlanResult> results;
    std::string failures;
    for (std::size_t i = 0; i < maps.size(); ++i) {
      auto r = frozenlake::plan_and_decode(planner, maps[i]);
      const auto sub = dir / names[i];
      write_ppm(sub / "frame_00.ppm", frozenlake::render(maps[i], maps[i].start, planner.cfg.render), side, side);
      for (std::size_t s = 0; s < r.frames.size(); ++s)
        write_ppm(sub / numbered("frame_", s + 1, 2, ".ppm"), r.frames[s], side, side);
      std::string actions;
      for (auto a : r.actions) actions.push_back(frozenlake::action_char(a));
      ojson m;
      m["map"] = maps[i].to_text();
      m["actions"] = actions;
      m["outcome"] = frozenlake::to_string(r.outcome);
      ojson pos = ojson::array();
      for (const auto& p : r.positions) pos.push_back({p.row, p.col});
      m["positions"] = pos;
      m["frames"] = r.frames.size() + 1;
      analysis::write_text_file(sub / "manifest.json", m.dump(2) + "\n");
      if (r.outcome != frozenlake::Outcome::Goal) {
        ojson f;
        f["map_id"] = names[i];
        f["outcome"] = m["outcome"];
        f["actions"] = actions;
        f["map"] = m["map"];
        failures += ndjson_line(f);
      }
      results.push_back(std::move(r));
    }
    const auto summary = frozenlake::summarize_plans(results);
    const auto gate = frozenlake::evaluate_gate(planner, solvable);

    ojson s;
    s["maps"] = maps.size();
    s["goal_rate"] = summary.goal_rate;
    s["goals"] = summary.goals;
    s["holes"] = summary.holes;
    s["no_plan"] = summary.no_plan;
    s["gate_accuracy"] = gate.accuracy;
    s["gate_decisions"] = gate.decisions;
    s["confusion"] = gate.confusion;
    s["confusion_diagonal_dominant"] = gate.diagonal_dominant();
    analysis::write_text_file(dir / "summary.json", s.dump(2) + "\n");
    analysis::write_text_file(dir / "failures.ndjson", failures);

    char line[160];
    std::snprintf(line, sizeof line, "goal rate %.3f (%zu/%zu), holes %zu, no plan %zu, gate accuracy %.3f\n",
                  summary.goal_rate, summary.goals, maps.size(), summary.holes, summary.no_plan, gate.accuracy);
    out << line;
    for (const auto& f : summary.failures)
      out << "failure: " << names[f] << " " << frozenlake::to_string(results[f].outcome) << "\n";
    return kExitOk;
  });
}

}  // namespace rsr::cli
