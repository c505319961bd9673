// SPDX-License-Identifier: Apache-2.0

#include "rsr/cli/config.hpp"

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

namespace rsr::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <class T>
T parse_integer(const std::string& key, const std::string& v) {
  T out{};
  auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size())
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double out = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + ": expected a number, got '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <class T>
Field integer(T RunConfig::*m, const std::string& key) {
  return {[m, key](RunConfig& c, const std::string& v) { c.*m = parse_integer<T>(key, v); },
          [m](const RunConfig& c) { return std::to_string(c.*m); }};
}

Field real(double RunConfig::*m, const std::string& key) {
  return {[m, key](RunConfig& c, const std::string& v) { c.*m = parse_double(key, v); },
          [m](const RunConfig& c) { return fmt(c.*m); }};
}

Field boolean(bool RunConfig::*m, const std::string& key) {
  return {[m, key](RunConfig& c, const std::string& v) { c.*m = parse_bool(key, v); },
          [m](const RunConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

// Ordered as written by serialize_config.
const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = [] {
    std::vector<std::pair<std::string, Field>> t;
    auto add = [&](const std::string& k, Field f) { t.emplace_back(k, std::move(f)); };
    add("task", {[](RunConfig& c, const std::string& v) {
                   if (v == "diffusion") c.task = Task::Diffusion;
                   else if (v == "frozenlake") c.task = Task::FrozenLake;
                   else throw ConfigError("task: expected diffusion or frozenlake, got '" + v + "'");
                 },
                 [](const RunConfig& c) { return to_string(c.task); }});
    add("seed", integer(&RunConfig::seed, "seed"));
    add("output_dir", {[](RunConfig& c, const std::string& v) {
                         if (v.empty()) throw ConfigError("output_dir: must not be empty");
                         c.output_dir = v;
                       },
                       [](const RunConfig& c) { return c.output_dir; }});
    add("dataset", {[](RunConfig& c, const std::string& v) {
                      try {
                        c.dataset = diffusion::parse_dataset_kind(v);
                      } catch (const ConfigError& e) {
                        throw ConfigError(std::string("dataset: ") + e.what());
                      }
                    },
                    [](const RunConfig& c) { return diffusion::to_string(c.dataset); }});
    add("dataset_size", integer(&RunConfig::dataset_size, "dataset_size"));
    add("image_size", integer(&RunConfig::image_size, "image_size"));
    add("classes", integer(&RunConfig::classes, "classes"));
    add("patch", integer(&RunConfig::patch, "patch"));
    add("dim", integer(&RunConfig::dim, "dim"));
    add("heads", integer(&RunConfig::heads, "heads"));
    add("layers", integer(&RunConfig::layers, "layers"));
    add("recursion", boolean(&RunConfig::recursion, "recursion"));
    add("experts", integer(&RunConfig::experts, "experts"));
    add("latent_steps", integer(&RunConfig::latent_steps, "latent_steps"));
    add("tau", real(&RunConfig::tau, "tau"));
    add("lora_rank", integer(&RunConfig::lora_rank, "lora_rank"));
    add("target_layers", {[](RunConfig& c, const std::string& v) {
                            c.target_layers.clear();
                            std::istringstream in(v);
                            for (std::string item; std::getline(in, item, ',');)
                              c.target_layers.push_back(parse_integer<int>("target_layers", trim(item)));
                          },
                          [](const RunConfig& c) {
                            std::string s;
                            for (std::size_t i = 0; i < c.target_layers.size(); ++i)
                              s += (i ? "," : "") + std::to_string(c.target_layers[i]);
                            return s;
                          }});
    add("remodulate_each_step", boolean(&RunConfig::remodulate_each_step, "remodulate_each_step"));
    add("gate_uses_conditioning", boolean(&RunConfig::gate_uses_conditioning, "gate_uses_conditioning"));
    add("diffusion_steps", integer(&RunConfig::diffusion_steps, "diffusion_steps"));
    add("beta_start", real(&RunConfig::beta_start, "beta_start"));
    add("beta_end", real(&RunConfig::beta_end, "beta_end"));
    add("pretrain_steps", integer(&RunConfig::pretrain_steps, "pretrain_steps"));
    add("finetune_steps", integer(&RunConfig::finetune_steps, "finetune_steps"));
    add("batch_size", integer(&RunConfig::batch_size, "batch_size"));
    add("lr", real(&RunConfig::lr, "lr"));
    add("beta1", real(&RunConfig::beta1, "beta1"));
    add("beta2", real(&RunConfig::beta2, "beta2"));
    add("weight_decay", real(&RunConfig::weight_decay, "weight_decay"));
    add("grad_clip", real(&RunConfig::grad_clip, "grad_clip"));
    add("balance_weight", real(&RunConfig::balance_weight, "balance_weight"));
    add("freeze_base", boolean(&RunConfig::freeze_base, "freeze_base"));
    add("log_every", integer(&RunConfig::log_every, "log_every"));
    add("sample_chunk", integer(&RunConfig::sample_chunk, "sample_chunk"));
    add("grid", integer(&RunConfig::grid, "grid"));
    add("cell_px", integer(&RunConfig::cell_px, "cell_px"));
    add("train_maps", integer(&RunConfig::train_maps, "train_maps"));
    add("eval_maps", integer(&RunConfig::eval_maps, "eval_maps"));
    add("hole_density", real(&RunConfig::hole_density, "hole_density"));
    add("max_holes", integer(&RunConfig::max_holes, "max_holes"));
    add("epsilon", real(&RunConfig::epsilon, "epsilon"));
    add("planner_steps", integer(&RunConfig::planner_steps, "planner_steps"));
    add("planner_batch", integer(&RunConfig::planner_batch, "planner_batch"));
    add("planner_lr", real(&RunConfig::planner_lr, "planner_lr"));
    add("planner_dim", integer(&RunConfig::planner_dim, "planner_dim"));
    add("planner_heads", integer(&RunConfig::planner_heads, "planner_heads"));
    add("encoder_layers", integer(&RunConfig::encoder_layers, "encoder_layers"));
    add("planner_rank", integer(&RunConfig::planner_rank, "planner_rank"));
    add("gate_hidden", integer(&RunConfig::gate_hidden, "gate_hidden"));
    add("decoder_weight", real(&RunConfig::decoder_weight, "decoder_weight"));
    return t;
  }();
  return table;
}

template <class F>
void with_prefix(const std::string& key, F&& f) {
  try {
    f();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    throw ConfigError(msg.rfind(key + ":", 0) == 0 ? msg : key + ": " + msg);
  }
}

}  // namespace

std::string to_string(Task t) { return t == Task::Diffusion ? "diffusion" : "frozenlake"; }

void RunConfig::validate() const {
  auto positive = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) throw ConfigError(key + ": " + what);
  };
  positive(dataset_size > 0, "dataset_size", "must be positive");
  positive(classes >= 2, "classes", "must be at least 2");
  positive(image_size >= 4, "image_size", "must be at least 4");
  positive(latent_steps >= 1, "latent_steps", "must be at least 1");
  positive(experts >= 1, "experts", "must be at least 1");
  positive(tau > 0.0, "tau", "must be positive");
  positive(diffusion_steps >= 2, "diffusion_steps", "must be at least 2");
  positive(beta_start > 0.0 && beta_end < 1.0 && beta_start <= beta_end, "beta_end",
           "need 0 < beta_start <= beta_end < 1");
  positive(batch_size > 0, "batch_size", "must be positive");
  positive(lr > 0.0, "lr", "must be positive");
  positive(beta1 >= 0.0 && beta1 < 1.0, "beta1", "must be in [0, 1)");
  positive(beta2 >= 0.0 && beta2 < 1.0, "beta2", "must be in [0, 1)");
  positive(weight_decay >= 0.0, "weight_decay", "must be non-negative");
  positive(grad_clip >= 0.0, "grad_clip", "must be non-negative");
  positive(log_every > 0, "log_every", "must be positive");
  positive(sample_chunk > 0, "sample_chunk", "must be positive");
  positive(pretrain_steps >= 0, "pretrain_steps", "must be non-negative");
  positive(finetune_steps >= 0, "finetune_steps", "must be non-negative");
  positive(hole_density >= 0.0 && hole_density <= 0.4, "hole_density", "must be in [0, 0.4]");
  positive(epsilon >= 0.0 && epsilon <= 1.0, "epsilon", "must be in [0, 1]");
  positive(train_maps > 0 && eval_maps > 0, "train_maps", "map counts must be positive");
  positive(planner_steps >= 0, "planner_steps", "must be non-negative");
  positive(planner_batch > 0, "planner_batch", "must be positive");
  positive(planner_lr > 0.0, "planner_lr", "must be positive");
  if (task == Task::Diffusion) {
    if (dataset == diffusion::DatasetKind::Shapes && classes > diffusion::kMaxShapeClasses)
      throw ConfigError("classes: shapes dataset supports at most " + std::to_string(diffusion::kMaxShapeClasses));
    with_prefix("target_layers", [&] { dit_config().validate(); });
    with_prefix("lora_rank", [&] {
      if (lora_rank == 0 || lora_rank > dim) throw ConfigError("must be in [1, dim]");
    });
  } else {
    with_prefix("experts", [&] { planner_config().validate(); });
  }
}

diffusion::DitConfig RunConfig::dit_config() const {
  diffusion::DitConfig c;
  c.height = c.width = image_size;
  c.patch = patch;
  c.dim = dim;
  c.heads = heads;
  c.layers = layers;
  c.classes = classes;
  c.recursion_enabled = recursion;
  c.recursion.experts = experts;
  c.recursion.latent_steps = latent_steps;
  c.recursion.tau = tau;
  c.recursion.lora_rank = lora_rank;
  c.recursion.target_layers = recursion ? target_layers : std::vector<int>{};
  c.recursion.remodulate_each_step = remodulate_each_step;
  c.recursion.gate_uses_conditioning = gate_uses_conditioning;
  return c;
}

diffusion::TrainConfig RunConfig::train_config() const {
  diffusion::TrainConfig t;
  t.pretrain_steps = pretrain_steps;
  t.finetune_steps = finetune_steps;
  t.batch = batch_size;
  t.optim.lr = lr;
  t.optim.beta1 = beta1;
  t.optim.beta2 = beta2;
  t.optim.weight_decay = weight_decay;
  t.grad_clip = grad_clip;
  t.freeze_base_in_finetune = freeze_base;
  t.balance_weight = balance_weight;
  t.seed = seed;
  return t;
}

diffusion::Schedule RunConfig::schedule() const { return diffusion::Schedule::linear(diffusion_steps, beta_start, beta_end); }

diffusion::ToyDataset RunConfig::dataset_for_run() const {
  return diffusion::make_dataset(dataset, dataset_size, classes, image_size, image_size, Rng(seed).split(11).next_u64());
}

frozenlake::PlannerConfig RunConfig::planner_config() const {
  frozenlake::PlannerConfig p;
  p.grid = grid;
  p.render.cell_px = cell_px;
  p.experts = frozenlake::kActions;
  p.dim = planner_dim;
  p.heads = planner_heads;
  p.encoder_layers = encoder_layers;
  p.lora_rank = planner_rank;
  p.gate_hidden = gate_hidden;
  p.tau = tau;
  return p;
}

frozenlake::PlannerTrainConfig RunConfig::planner_train_config() const {
  frozenlake::PlannerTrainConfig t;
  t.steps = planner_steps;
  t.batch = planner_batch;
  t.optim.lr = planner_lr;
  t.optim.beta1 = beta1;
  t.optim.beta2 = beta2;
  t.optim.weight_decay = weight_decay;
  t.grad_clip = grad_clip;
  t.decoder_weight = decoder_weight;
  t.seed = seed;
  return t;
}

RunConfig parse_config(const std::string& text) {
  static const std::map<std::string, const Field*> index = [] {
    std::map<std::string, const Field*> m;
    for (const auto& [k, f] : fields()) m[k] = &f;
    return m;
  }();
  RunConfig cfg;
  std::istringstream in(text);
  std::size_t lineno = 0;
  for (std::string raw; std::getline(in, raw);) {
    ++lineno;
    const auto line = trim(raw);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    const auto key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    auto it = index.find(key);
    if (it == index.end()) throw ConfigError("line " + std::to_string(lineno) + ": unknown key '" + key + "'");
    try {
      it->second->set(cfg, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

std::string serialize_config(const RunConfig& cfg) {
  std::string out;
  for (const auto& [k, f] : fields()) out += k + " = " + f.get(cfg) + "\n";
  return out;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read config file " + path.string());
  std::ostringstream s;
  s << f.rdbuf();
  return parse_config(s.str());
}

std::filesystem::path resolve_output_dir(const std::string& fallback) {
  if (const char* env = std::getenv("RSR_OUTPUT_DIR"); env && *env) return env;
  return fallback;
}

}  // namespace rsr::cli
