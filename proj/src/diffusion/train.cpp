// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/train.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rsr/numerics/ops.hpp"
#include "rsr/routing/routing.hpp"

namespace rsr::diffusion {

void TrainConfig::validate() const {
  if (pretrain_steps < 0 || finetune_steps < 0) throw ConfigError("training steps must be non-negative");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (!(optim.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (balance_weight < 0.0) throw ConfigError("balance weight must be non-negative");
}

namespace {

struct Batch {
  Tensor xt;  // patches
  Tensor eps;
  std::vector<int> t, labels;
};

Batch draw_batch(const DitModel& model, const ToyDataset& data, const Schedule& schedule, std::size_t n,
                 Rng& rng) {
  Batch b;
  std::vector<double> x0, noisy, noise;
  x0.reserve(n * data.pixels());
  for (std::size_t i = 0; i < n; ++i) {
    const auto idx = static_cast<std::size_t>(rng.below(data.count));
    const int t = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps)));
    auto [xt, eps] = add_noise(data.image(idx), t, schedule, rng);
    noisy.insert(noisy.end(), xt.begin(), xt.end());
    noise.insert(noise.end(), eps.begin(), eps.end());
    b.t.push_back(t);
    b.labels.push_back(data.labels[idx]);
  }
  const auto& cfg = model.cfg;
  const Shape shape{n * cfg.tokens(), cfg.patch_dim()};
  b.xt = Tensor(shape, patchify(noisy, n, cfg));
  b.eps = Tensor(shape, patchify(noise, n, cfg));
  return b;
}

void check_compatible(const DitModel& model, const ToyDataset& data) {
  const auto& c = model.cfg;
  if (data.channels != c.channels || data.height != c.height || data.width != c.width) {
    throw ConfigError("dataset images do not match the model's image shape");
  }
  if (data.classes > c.classes) throw ConfigError("dataset has more classes than the model");
}

}  // namespace

TrainSummary train(DitModel& model, const ToyDataset& data, const Schedule& schedule, const TrainConfig& cfg,
                   const TrainSink& sink) {
  cfg.validate();
  check_compatible(model, data);
  const bool has_recursion = model.cfg.recursion_enabled && !model.recursive_params().empty();
  const auto m = model.cfg.recursion.experts;
  const bool use_balance = has_recursion && m >= 3 && cfg.balance_weight > 0.0;

  TrainSummary summary;
  summary.finetune_usage.assign(m, 0.0);
  const Rng root(cfg.seed);

  auto run_phase = [&](const char* name, int first_step, int steps, bool recursion_on, ParamList trainable) {
    if (steps == 0) return;
    set_trainable(model.all_params(), false);
    set_trainable(trainable, true);
    AdamW opt(trainable, cfg.optim);
    for (int s = 0; s < steps; ++s) {
      const int step = first_step + s;
      Rng rng = root.split(static_cast<std::uint64_t>(step));
      auto batch = draw_batch(model, data, schedule, cfg.batch, rng);
      Rng route_rng = rng.split(7);
      ForwardOptions fo;
      fo.use_recursion = recursion_on;
      fo.control.training = true;
      fo.control.rng = &route_rng;
      auto out = forward(model, batch.xt, batch.t, batch.labels, fo);
      auto loss = ops::mse(out.eps, batch.eps);
      TrainRecord rec;
      rec.step = step;
      rec.phase = name;
      rec.loss = loss.item();
      if (recursion_on) {
        std::vector<int> all;
        for (const auto& d : out.decisions) all.insert(all.end(), d.selected.begin(), d.selected.end());
        rec.expert_usage = routing::usage(all, m);
        for (int sel : all) summary.finetune_usage[static_cast<std::size_t>(sel)] += 1.0;
        summary.routed_tokens += static_cast<long>(all.size());
        if (use_balance) {
          Tensor bl;
          for (const auto& d : out.decisions) {
            auto term = routing::balance_loss(d.soft_probs, d.selected);
            bl = bl.defined() ? ops::add(bl, term) : term;
          }
          bl = ops::scale(bl, 1.0 / static_cast<double>(out.decisions.size()));
          rec.balance_loss = bl.item();
          loss = ops::add(loss, ops::scale(bl, cfg.balance_weight));
        }
      }
      if (!std::isfinite(loss.item())) {
        std::ostringstream msg;
        msg << "training diverged at step " << step << " (" << name << "): loss=" << loss.item();
        throw std::runtime_error(msg.str());
      }
      backward(loss);
      if (cfg.grad_clip > 0.0) clip_grad_norm(trainable, cfg.grad_clip);
      opt.step();
      summary.losses.push_back(rec.loss);
      if (sink) sink(rec);
    }
  };

  if (has_recursion) {
    run_phase("pretrain", 1, cfg.pretrain_steps, false, model.base_params());
    auto ft = model.recursive_params();
    if (!cfg.freeze_base_in_finetune) ft = model.all_params();
    run_phase("finetune", cfg.pretrain_steps + 1, cfg.finetune_steps, true, ft);
  } else {
    run_phase("pretrain", 1, cfg.total_steps(), false, model.base_params());
  }
  set_trainable(model.all_params(), false);
  if (summary.routed_tokens > 0)
    for (auto& u : summary.finetune_usage) u /= static_cast<double>(summary.routed_tokens);
  return summary;
}

double evaluate_loss(const DitModel& model, const ToyDataset& data, const Schedule& schedule, std::size_t batch,
                     std::uint64_t seed, bool use_recursion) {
  check_compatible(model, data);
  NoGradGuard guard;
  Rng rng(seed);
  auto b = draw_batch(model, data, schedule, batch, rng);
  ForwardOptions fo;
  fo.use_recursion = use_recursion;
  return ops::mse(forward(model, b.xt, b.t, b.labels, fo).eps, b.eps).item();
}

}  // namespace rsr::diffusion
