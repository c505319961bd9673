// SPDX-License-Identifier: Apache-2.0

#include "rsr/frozenlake/planner.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <stdexcept>

#include "rsr/numerics/ops.hpp"

namespace rsr::frozenlake {

void PlannerConfig::validate() const {
  if (experts != kActions) throw ConfigError("planner needs experts == 4 (one per action), got " + std::to_string(experts));
  if (grid < 2) throw ConfigError("grid must be at least 2");
  if (render.cell_px < 3) throw ConfigError("cell_px must be at least 3");
  if (heads == 0 || dim % heads != 0 || dim % 2 != 0) throw ConfigError("dim must be even and divisible by heads");
  if (lora_rank == 0) throw ConfigError("lora_rank must be positive");
}

void PlannerTrainConfig::validate() const {
  if (steps < 0 || batch == 0) throw ConfigError("planner training needs steps >= 0 and batch > 0");
  if (!(optim.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (lr_floor < 0.0 || lr_floor > 1.0) throw ConfigError("lr_floor must be in [0, 1]");
}

namespace {

recursion::RecursionConfig recursion_config(const PlannerConfig& cfg, int steps) {
  recursion::RecursionConfig r;
  r.experts = cfg.experts;
  r.latent_steps = steps;
  r.tau = cfg.tau;
  r.lora_rank = cfg.lora_rank;
  r.granularity = recursion::Granularity::PerSample;
  return r;
}

std::vector<double> patchify_frames(const std::vector<double>& frames, std::size_t batch, const PlannerConfig& cfg) {
  const auto cp = cfg.render.cell_px, g = static_cast<std::size_t>(cfg.grid), w = g * cp;
  std::vector<double> out(frames.size());
  std::size_t o = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t r = 0; r < g; ++r)
      for (std::size_t c = 0; c < g; ++c)
        for (std::size_t y = 0; y < cp; ++y)
          for (std::size_t x = 0; x < cp; ++x) out[o++] = frames[b * w * w + (r * cp + y) * w + c * cp + x];
  return out;
}

std::vector<double> unpatchify_frame(std::span<const double> tokens, std::size_t b, const PlannerConfig& cfg) {
  const auto cp = cfg.render.cell_px, g = static_cast<std::size_t>(cfg.grid), w = g * cp;
  std::vector<double> out(w * w);
  const double* src = tokens.data() + b * cfg.frame_pixels();
  std::size_t o = 0;
  for (std::size_t r = 0; r < g; ++r)
    for (std::size_t c = 0; c < g; ++c)
      for (std::size_t y = 0; y < cp; ++y)
        for (std::size_t x = 0; x < cp; ++x) out[(r * cp + y) * w + c * cp + x] = src[o++];
  return out;
}

Tensor task_rows(const Planner& p, std::size_t batch) { return ops::repeat_rows(p.task, batch); }

}  // namespace

Planner Planner::init(const PlannerConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Planner p;
  p.cfg = cfg;
  const Rng root(seed);
  Rng rng = root.split(1);
  p.patch_embed = Linear(cfg.patch_dim(), cfg.dim, rng);
  p.task = param_normal({1, cfg.dim}, 1.0, rng);
  std::vector<double> pos;
  for (std::size_t n = 0; n < cfg.tokens(); ++n) {
    auto e = ops::sinusoidal_embed(static_cast<double>(n), cfg.dim);
    pos.insert(pos.end(), e.values().begin(), e.values().end());
  }
  p.pos = Tensor({cfg.tokens(), cfg.dim}, std::move(pos));
  for (std::size_t l = 0; l < cfg.encoder_layers; ++l) {
    Rng r = root.split(100 + l);
    p.encoder.push_back(mmdit::MmditBlockParams::init(cfg.dim, cfg.heads, false, r));
  }
  Rng br = root.split(200);
  p.block = mmdit::MmditBlockParams::init(cfg.dim, cfg.heads, false, br);
  if (cfg.zero_base_projection) {
    for (auto* w : {&p.block.vision.wq, &p.block.vision.wk, &p.block.vision.wv})
      *w = Tensor(w->shape(), std::vector<double>(w->values().size(), 0.0));
  }
  Rng rr = root.split(300);
  p.rec = recursion::RecursiveComponent::init(recursion_config(cfg, 1), cfg.dim, rr, cfg.gate_hidden);
  for (std::size_t l = 0; l < cfg.decoder_layers; ++l) {
    Rng r = root.split(400 + l);
    p.decoder.push_back(mmdit::MmditBlockParams::init(cfg.dim, cfg.heads, false, r));
  }
  p.decoder_head = Linear::zeros(cfg.dim, cfg.patch_dim());
  return p;
}

ParamList Planner::params() const {
  ParamList out;
  patch_embed.collect(out, "patch_embed");
  out.emplace_back("task", task);
  for (std::size_t l = 0; l < encoder.size(); ++l) encoder[l].collect(out, "encoder" + std::to_string(l));
  // the recursive block contributes its modulation; projections are either
  // zero (and stay zero) or trained with the rest
  block.vision.mod.collect(out, "block.mod");
  if (!cfg.zero_base_projection) {
    out.emplace_back("block.wq", block.vision.wq);
    out.emplace_back("block.wk", block.vision.wk);
    out.emplace_back("block.wv", block.vision.wv);
  }
  rec.collect(out, "rec");
  for (std::size_t l = 0; l < decoder.size(); ++l) decoder[l].collect(out, "decoder" + std::to_string(l));
  decoder_head.collect(out, "decoder_head");
  return out;
}

PlannerPass planner_pass(const Planner& p, const std::vector<double>& frames, std::size_t batch, int steps,
                         const std::vector<std::vector<int>>* forced) {
  const auto& cfg = p.cfg;
  if (frames.size() != batch * cfg.frame_pixels()) throw ShapeError("planner_pass: frame buffer size mismatch");
  if (steps < 1) throw ConfigError("planner_pass: steps must be positive");
  auto y = task_rows(p, batch);
  Tensor tok({batch * cfg.tokens(), cfg.patch_dim()}, patchify_frames(frames, batch, cfg));
  auto h = ops::add(p.patch_embed(tok), ops::concat_rows(std::vector<Tensor>(batch, p.pos)));
  for (const auto& b : p.encoder) h = mmdit::block_forward(h, Tensor(), y, b).x;

  recursion::RoutingControl control;
  control.estimator = routing::Estimator::Detached;
  control.forced = forced;
  auto r = recursion::recursive_attention(h, Tensor(), y, p.block, p.rec, recursion_config(cfg, steps), control,
                                          nullptr, nullptr);
  PlannerPass out;
  for (auto& d : r.decisions) {
    out.logits.push_back(d.logits);
    out.selected.push_back(d.selected);
  }
  out.readouts = std::move(r.readouts);
  return out;
}

Tensor decode(const Planner& p, const Tensor& readout, std::size_t batch) {
  auto y = task_rows(p, batch);
  Tensor h = readout;
  for (const auto& b : p.decoder) h = mmdit::block_forward(h, Tensor(), y, b).x;
  return p.decoder_head(h);
}

std::vector<PlannerRecord> train_planner(Planner& p, const std::vector<Rollout>& rollouts,
                                         const PlannerTrainConfig& cfg,
                                         const std::function<void(const PlannerRecord&)>& sink) {
  cfg.validate();
  std::map<std::size_t, std::vector<std::size_t>> by_length;
  for (std::size_t i = 0; i < rollouts.size(); ++i) {
    if (rollouts[i].map.size != p.cfg.grid) throw ConfigError("rollout grid does not match the planner");
    if (rollouts[i].length() > 0) by_length[rollouts[i].length()].push_back(i);
  }
  if (by_length.empty()) throw ConfigError("train_planner: no non-empty rollouts");
  std::vector<std::size_t> nonempty;
  for (const auto& [len, ids] : by_length) nonempty.insert(nonempty.end(), ids.begin(), ids.end());

  auto params = p.params();
  set_trainable(params, true);
  AdamW opt(params, cfg.optim);
  const Rng root(cfg.seed);
  std::vector<PlannerRecord> log;

  for (int step = 1; step <= cfg.steps; ++step) {
    if (cfg.cosine_decay) {
      const double frac = static_cast<double>(step - 1) / static_cast<double>(std::max(cfg.steps, 1));
      const double w = cfg.lr_floor + (1.0 - cfg.lr_floor) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
      opt.set_lr(cfg.optim.lr * w);
    }
    Rng rng = root.split(static_cast<std::uint64_t>(step));
    const auto& anchor = rollouts[nonempty[rng.below(nonempty.size())]];
    const auto len = anchor.length();
    const auto& pool = by_length.at(len);
    std::vector<const Rollout*> batch;
    for (std::size_t b = 0; b < cfg.batch; ++b) batch.push_back(&rollouts[pool[rng.below(pool.size())]]);
    const auto n = batch.size();

    std::vector<double> frames0;
    std::vector<std::vector<int>> forced(len, std::vector<int>(n));
    std::vector<std::vector<int>> labels(len, std::vector<int>(n));
    std::vector<std::vector<double>> targets(len);
    for (std::size_t b = 0; b < n; ++b) {
      frames0.insert(frames0.end(), batch[b]->frames[0].begin(), batch[b]->frames[0].end());
      for (std::size_t s = 0; s < len; ++s) {
        forced[s][b] = static_cast<int>(batch[b]->actions[s]);
        labels[s][b] = static_cast<int>(batch[b]->oracle[s]);
        targets[s].insert(targets[s].end(), batch[b]->frames[s + 1].begin(), batch[b]->frames[s + 1].end());
      }
    }
    auto pass = planner_pass(p, frames0, n, static_cast<int>(len), &forced);
    Tensor ce, mse;
    long hits = 0;
    for (std::size_t s = 0; s < len; ++s) {
      auto c = ops::cross_entropy(pass.logits[s], labels[s]);
      ce = ce.defined() ? ops::add(ce, c) : c;
      Tensor target({n * p.cfg.tokens(), p.cfg.patch_dim()}, patchify_frames(targets[s], n, p.cfg));
      auto m = ops::mse(decode(p, pass.readouts[s], n), target);
      mse = mse.defined() ? ops::add(mse, m) : m;
      auto lv = pass.logits[s].values();
      for (std::size_t b = 0; b < n; ++b) {
        const auto row = lv.subspan(b * kActions, kActions);
        hits += std::max_element(row.begin(), row.end()) - row.begin() == labels[s][b] ? 1 : 0;
      }
    }
    const double inv = 1.0 / static_cast<double>(len);
    ce = ops::scale(ce, inv);
    mse = ops::scale(mse, inv);
    auto loss = ops::add(ce, ops::scale(mse, cfg.decoder_weight));
    if (!std::isfinite(loss.item())) throw std::runtime_error("planner training diverged at step " + std::to_string(step));
    backward(loss);
    if (cfg.grad_clip > 0.0) clip_grad_norm(params, cfg.grad_clip);
    opt.step();
    PlannerRecord rec{step, loss.item(), ce.item(), mse.item(),
                      static_cast<double>(hits) / static_cast<double>(n * len)};
    log.push_back(rec);
    if (sink) sink(rec);
  }
  set_trainable(params, false);
  return log;
}

bool GateEvaluation::diagonal_dominant() const {
  for (std::size_t r = 0; r < kActions; ++r) {
    long row = 0;
    for (auto v : confusion[r]) row += v;
    if (row == 0) continue;
    for (std::size_t c = 0; c < kActions; ++c)
      if (c != r && confusion[r][c] >= confusion[r][r]) return false;
  }
  return true;
}

GateEvaluation evaluate_gate(const Planner& p, const std::vector<LakeMap>& maps) {
  NoGradGuard guard;
  GateEvaluation ev;
  long hits = 0;
  std::map<std::size_t, std::vector<std::vector<Action>>> plans;
  std::map<std::size_t, std::vector<const LakeMap*>> groups;
  for (const auto& m : maps) {
    auto plan = bfs_plan(m);
    if (plan.empty()) continue;
    groups[plan.size()].push_back(&m);
    plans[plan.size()].push_back(std::move(plan));
  }
  for (const auto& [len, ms] : groups) {
    const auto n = ms.size();
    std::vector<double> frames;
    std::vector<std::vector<int>> forced(len, std::vector<int>(n));
    for (std::size_t b = 0; b < n; ++b) {
      auto f = render(*ms[b], ms[b]->start, p.cfg.render);
      frames.insert(frames.end(), f.begin(), f.end());
      for (std::size_t s = 0; s < len; ++s) forced[s][b] = static_cast<int>(plans[len][b][s]);
    }
    auto pass = planner_pass(p, frames, n, static_cast<int>(len), &forced);
    for (std::size_t s = 0; s < len; ++s) {
      auto lv = pass.logits[s].values();
      for (std::size_t b = 0; b < n; ++b) {
        const auto row = lv.subspan(b * kActions, kActions);
        const auto pick = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
        const auto truth = static_cast<std::size_t>(forced[s][b]);
        ++ev.confusion[truth][pick];
        hits += pick == truth ? 1 : 0;
        ++ev.decisions;
      }
    }
  }
  ev.accuracy = ev.decisions ? static_cast<double>(hits) / static_cast<double>(ev.decisions) : 0.0;
  return ev;
}

double evaluate_decoder(const Planner& p, const std::vector<Rollout>& rollouts) {
  NoGradGuard guard;
  double acc = 0.0;
  long frames = 0;
  for (const auto& r : rollouts) {
    if (r.length() == 0) continue;
    std::vector<std::vector<int>> forced;
    for (Action a : r.actions) forced.push_back({static_cast<int>(a)});
    auto pass = planner_pass(p, r.frames[0], 1, static_cast<int>(r.length()), &forced);
    for (std::size_t s = 0; s < r.length(); ++s) {
      auto dec = decode(p, pass.readouts[s], 1);
      auto img = unpatchify_frame(dec.values(), 0, p.cfg);
      double e = 0.0;
      for (std::size_t i = 0; i < img.size(); ++i) e += (img[i] - r.frames[s + 1][i]) * (img[i] - r.frames[s + 1][i]);
      acc += e / static_cast<double>(img.size());
      ++frames;
    }
  }
  return frames ? acc / static_cast<double>(frames) : 0.0;
}

std::string to_string(Outcome o) {
  switch (o) {
    case Outcome::Goal: return "goal";
    case Outcome::Hole: return "hole";
    case Outcome::NoPlan: return "no_plan";
  }
  return "?";
}

PlanResult plan_and_decode(const Planner& p, const LakeMap& map) {
  if (map.size != p.cfg.grid) throw ConfigError("map grid does not match the planner");
  NoGradGuard guard;
  PlanResult res;
  res.positions.push_back(map.start);
  if (map.start == map.goal) {
    res.outcome = Outcome::Goal;
    return res;
  }
  const int cap = p.cfg.step_cap();
  auto pass = planner_pass(p, render(map, map.start, p.cfg.render), 1, cap, nullptr);
  Pos pos = map.start;
  for (int s = 0; s < cap; ++s) {
    const auto a = static_cast<Action>(pass.selected[static_cast<std::size_t>(s)][0]);
    res.actions.push_back(a);
    pos = step(map, pos, a);
    res.positions.push_back(pos);
    auto dec = decode(p, pass.readouts[static_cast<std::size_t>(s)], 1);
    res.frames.push_back(unpatchify_frame(dec.values(), 0, p.cfg));
    if (pos == map.goal) {
      res.outcome = Outcome::Goal;
      return res;
    }
    if (map.at(pos) == Cell::Hole) {
      res.outcome = Outcome::Hole;
      return res;
    }
  }
  res.outcome = Outcome::NoPlan;
  return res;
}

PlanSummary summarize_plans(const std::vector<PlanResult>& results) {
  PlanSummary s;
  for (std::size_t i = 0; i < results.size(); ++i) {
    switch (results[i].outcome) {
      case Outcome::Goal: ++s.goals; break;
      case Outcome::Hole: ++s.holes; s.failures.push_back(i); break;
      case Outcome::NoPlan: ++s.no_plan; s.failures.push_back(i); break;
    }
  }
  s.goal_rate = results.empty() ? 0.0 : static_cast<double>(s.goals) / static_cast<double>(results.size());
  return s;
}

}  // namespace rsr::frozenlake
