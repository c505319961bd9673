// SPDX-License-Identifier: Apache-2.0

#include "rsr/recursion/recursion.hpp"

#include <optional>

#include "rsr/numerics/ops.hpp"

namespace rsr::recursion {

void RecursionConfig::validate() const {
  if (experts < 1) throw ConfigError("recursion: experts must be >= 1");
  if (latent_steps < 1) throw ConfigError("recursion: latent_steps must be >= 1");
  if (!(tau > 0.0)) throw ConfigError("recursion: tau must be positive");
  if (lora_rank < 1) throw ConfigError("recursion: lora_rank must be >= 1");
}

RecursiveComponent RecursiveComponent::init(const RecursionConfig& cfg, std::size_t dim, Rng& rng,
                                            std::size_t gate_hidden) {
  cfg.validate();
  RecursiveComponent c;
  c.bank = adapters::init_expert_bank(cfg.experts, cfg.lora_rank, dim, rng);
  c.gate = routing::GateNetwork::init(dim, cfg.experts, rng, gate_hidden);
  return c;
}

void RecursiveComponent::collect(ParamList& out, const std::string& prefix) const {
  bank.collect(out, prefix + ".bank");
  gate.collect(out, prefix + ".gate");
}

namespace {

std::vector<double> copy_values(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

mmdit::Qkv split_qkv(const Tensor& fused, std::size_t d) {
  return {ops::slice_cols(fused, 0, d), ops::slice_cols(fused, d, 2 * d), ops::slice_cols(fused, 2 * d, 3 * d)};
}

}  // namespace

RecursionResult recursive_attention(const Tensor& x, const Tensor& c, const Tensor& y,
                                    const mmdit::MmditBlockParams& block, const RecursiveComponent& comp,
                                    const RecursionConfig& cfg, const RoutingControl& control,
                                    RecursionTrace* trace, Counters* counters) {
  cfg.validate();
  const auto d = block.dim;
  if (comp.bank.size() != cfg.experts || comp.gate.experts != cfg.experts) {
    throw ConfigError("recursion: bank has " + std::to_string(comp.bank.size()) + " experts, config expects " +
                      std::to_string(cfg.experts));
  }
  if (comp.bank.dim() != d || comp.gate.dim != d) throw ConfigError("recursion: expert width differs from block width");
  if (y.rank() != 2 || y.cols() != d) throw ShapeError("recursion: conditioning must be [batch x D]");
  const auto batch = y.rows();
  if (x.rank() != 2 || x.cols() != d || x.rows() % batch != 0) {
    throw ShapeError("recursion: vision tokens " + shape_str(x.shape()) + " incompatible with batch " +
                     std::to_string(batch));
  }
  const auto rows = x.rows();
  const auto tokens = rows / batch;
  const auto steps = cfg.latent_steps;
  const auto m = cfg.experts;

  // Modulate once; x̃ doubles as the residual and the step-0 state.
  auto mx = block.vision.modulation(y);
  auto x_mod = mmdit::modulate(x, mx.alpha, mx.beta, block.ln_eps);
  std::optional<mmdit::Modulation> mc;
  std::optional<mmdit::Qkv> context;
  if (c.defined()) {
    if (!block.text) throw ShapeError("recursion: text tokens given to a block without a text stream");
    mc = block.text->modulation(y);
    auto c_mod = mmdit::modulate(c, mc->alpha, mc->beta, block.ln_eps);
    context = mmdit::project(c_mod, *block.text);
    if (counters) ++counters->context_projection_calls;
  }

  if (trace) {
    trace->batch = batch;
    trace->tokens = tokens;
    trace->dim = d;
    trace->experts = m;
    trace->per_sample = cfg.granularity == Granularity::PerSample;
    trace->conditioning_ablated = !cfg.gate_uses_conditioning;
    trace->modulated_input = copy_values(x_mod);
    trace->steps.clear();
  }

  RecursionResult result;
  Tensor state = x_mod;
  Tensor text_out;
  for (int t = 1; t <= steps; ++t) {
    const bool final_step = (t == steps);
    const auto si = static_cast<std::size_t>(t - 1);

    auto token_logits = routing::gate_logits(state, y, t, comp.gate, cfg.gate_uses_conditioning);
    const bool per_sample = cfg.granularity == Granularity::PerSample;
    auto logits = per_sample ? ops::group_mean_rows(token_logits, tokens) : token_logits;

    routing::SelectOptions sel;
    sel.training = control.training;
    sel.estimator = control.estimator;
    sel.rng = control.rng;
    if (control.noise) sel.noise_override = control.noise->at(si);
    if (control.forced) sel.forced_selection = control.forced->at(si);
    auto decision = routing::gumbel_select(logits, cfg.tau, sel);

    std::vector<int> token_sel = decision.selected;
    Tensor token_weights = decision.weights;
    if (per_sample) {
      token_sel.resize(rows);
      for (std::size_t i = 0; i < rows; ++i) token_sel[i] = decision.selected[i / tokens];
      token_weights = ops::repeat_rows(decision.weights, tokens);
    }

    auto adapter_in = cfg.remodulate_each_step ? mmdit::modulate(state, mx.alpha, mx.beta, block.ln_eps) : state;
    auto delta = routing::dispatch_and_reassemble(
        adapter_in, token_sel, m,
        [&](std::size_t e, const Tensor& group) {
          if (counters) counters->adapter_token_calls += static_cast<long>(group.rows());
          return adapters::lora_apply_qkv(comp.bank.experts[e], group);
        },
        token_weights.requires_grad() ? token_weights : Tensor());
    if (counters) ++counters->adapter_steps;

    auto vis = split_qkv(delta, d);
    if (final_step) {
      auto base = mmdit::project(x_mod, block.vision);
      vis = {ops::add(vis.q, base.q), ops::add(vis.k, base.k), ops::add(vis.v, base.v)};
      if (counters) ++counters->base_projection_calls;
    }

    auto [ax, ac] = mmdit::attention_core(context ? &*context : nullptr, vis, batch, block.heads, block.attn_scale());
    text_out = ac;

    Tensor readout = ops::add(ax, x_mod);
    if (!final_step) {
      state = readout;
      if (counters) ++counters->residual_adds;
    } else {
      state = ax;
    }
    result.readouts.push_back(readout);

    if (trace) {
      StepRecord rec;
      rec.selected = decision.selected;
      rec.soft_probs = copy_values(decision.soft_probs);
      rec.attn_out = copy_values(ax);
      rec.state = copy_values(state);
      trace->steps.push_back(std::move(rec));
    }
    result.decisions.push_back(std::move(decision));
  }

  Tensor out_x = ops::matmul(state, block.vision.wo);
  Tensor out_c = text_out.defined() ? ops::matmul(text_out, block.text->wo) : Tensor();
  result.out = mmdit::attention_residual({x, c}, {out_x, out_c}, mx, mc ? &*mc : nullptr);
  return result;
}

BlockResult recursive_block_forward(const Tensor& x, const Tensor& c, const Tensor& y,
                                    const mmdit::MmditBlockParams& block, const RecursiveComponent& comp,
                                    const RecursionConfig& cfg, const RoutingControl& control,
                                    RecursionTrace* trace, Counters* counters) {
  auto r = recursive_attention(x, c, y, block, comp, cfg, control, trace, counters);
  auto mx = block.vision.modulation(y);
  std::optional<mmdit::Modulation> mc;
  if (c.defined()) mc = block.text->modulation(y);
  return {mmdit::mlp_sublayer(r.out, block, mx, mc ? &*mc : nullptr), std::move(r.decisions)};
}

}  // namespace rsr::recursion
