// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/model.hpp"

#include <algorithm>
#include <string>

#include "rsr/numerics/ops.hpp"

namespace rsr::diffusion {

void DitConfig::validate() const {
  if (patch == 0 || height % patch != 0 || width % patch != 0) {
    throw ConfigError("image " + std::to_string(height) + "x" + std::to_string(width) +
                      " is not divisible by patch " + std::to_string(patch));
  }
  if (heads == 0 || dim % heads != 0) throw ConfigError("dim must be divisible by heads");
  if (dim % 2 != 0) throw ConfigError("dim must be even for sinusoidal embeddings");
  if (layers == 0) throw ConfigError("layers must be >= 1");
  if (classes < 1) throw ConfigError("classes must be >= 1");
  recursion.validate();
  for (int l : recursion.target_layers) {
    if (l < 1 || static_cast<std::size_t>(l) > layers) {
      throw ConfigError("target layer " + std::to_string(l) + " outside [1, " + std::to_string(layers) + "]");
    }
  }
}

bool DitConfig::is_target(std::size_t layer_index0) const {
  const auto& t = recursion.target_layers;
  return std::find(t.begin(), t.end(), static_cast<int>(layer_index0) + 1) != t.end();
}

DitModel DitModel::init(const DitConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  DitModel m;
  m.cfg = cfg;
  const Rng root(seed);
  Rng embed_rng = root.split(1);
  m.patch_embed = Linear(cfg.patch_dim(), cfg.dim, embed_rng);
  m.class_embed = param_normal({cfg.classes, cfg.dim}, 1.0, embed_rng);

  std::vector<double> pos;
  pos.reserve(cfg.tokens() * cfg.dim);
  for (std::size_t n = 0; n < cfg.tokens(); ++n) {
    auto e = ops::sinusoidal_embed(static_cast<double>(n), cfg.dim);
    pos.insert(pos.end(), e.values().begin(), e.values().end());
  }
  m.pos = Tensor({cfg.tokens(), cfg.dim}, std::move(pos));

  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Rng block_rng = root.split(100 + l);
    m.blocks.push_back(mmdit::MmditBlockParams::init(cfg.dim, cfg.heads, false, block_rng));
    if (cfg.is_target(l)) {
      Rng rec_rng = root.split(1000 + l);
      m.recursive.emplace_back(recursion::RecursiveComponent::init(cfg.recursion, cfg.dim, rec_rng));
    } else {
      m.recursive.emplace_back(std::nullopt);
    }
  }
  m.final_mod = Linear::zeros(cfg.dim, 2 * cfg.dim);
  auto b = m.final_mod.bias.mutable_values();
  for (std::size_t i = 0; i < cfg.dim; ++i) b[i] = 1.0;
  m.head = Linear::zeros(cfg.dim, cfg.patch_dim());
  return m;
}

ParamList DitModel::base_params() const {
  ParamList out;
  patch_embed.collect(out, "patch_embed");
  out.emplace_back("class_embed", class_embed);
  for (std::size_t l = 0; l < blocks.size(); ++l) blocks[l].collect(out, "block" + std::to_string(l));
  final_mod.collect(out, "final_mod");
  head.collect(out, "head");
  return out;
}

ParamList DitModel::recursive_params() const {
  ParamList out;
  for (std::size_t l = 0; l < recursive.size(); ++l)
    if (recursive[l]) recursive[l]->collect(out, "rec" + std::to_string(l));
  return out;
}

ParamList DitModel::all_params() const {
  auto out = base_params();
  auto rec = recursive_params();
  out.insert(out.end(), rec.begin(), rec.end());
  return out;
}

std::vector<double> patchify(std::span<const double> images, std::size_t count, const DitConfig& cfg) {
  const auto p = cfg.patch, gh = cfg.height / p, gw = cfg.width / p, pd = cfg.patch_dim();
  if (images.size() != count * cfg.pixels()) throw ShapeError("patchify: image buffer size mismatch");
  std::vector<double> out(count * cfg.tokens() * pd);
  for (std::size_t n = 0; n < count; ++n) {
    const double* img = images.data() + n * cfg.pixels();
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        double* tok = out.data() + ((n * gh + gy) * gw + gx) * pd;
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t py = 0; py < p; ++py)
            for (std::size_t px = 0; px < p; ++px)
              tok[(c * p + py) * p + px] = img[(c * cfg.height + gy * p + py) * cfg.width + gx * p + px];
      }
    }
  }
  return out;
}

std::vector<double> unpatchify(std::span<const double> tokens, std::size_t count, const DitConfig& cfg) {
  const auto p = cfg.patch, gh = cfg.height / p, gw = cfg.width / p, pd = cfg.patch_dim();
  if (tokens.size() != count * cfg.tokens() * pd) throw ShapeError("unpatchify: token buffer size mismatch");
  std::vector<double> out(count * cfg.pixels());
  for (std::size_t n = 0; n < count; ++n) {
    double* img = out.data() + n * cfg.pixels();
    for (std::size_t gy = 0; gy < gh; ++gy) {
      for (std::size_t gx = 0; gx < gw; ++gx) {
        const double* tok = tokens.data() + ((n * gh + gy) * gw + gx) * pd;
        for (std::size_t c = 0; c < cfg.channels; ++c)
          for (std::size_t py = 0; py < p; ++py)
            for (std::size_t px = 0; px < p; ++px)
              img[(c * cfg.height + gy * p + py) * cfg.width + gx * p + px] = tok[(c * p + py) * p + px];
      }
    }
  }
  return out;
}

Tensor conditioning(const DitModel& model, std::span<const int> t, std::span<const int> labels) {
  if (t.size() != labels.size()) throw ShapeError("conditioning: timestep and label counts differ");
  std::vector<std::size_t> idx(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= model.cfg.classes) {
      throw std::out_of_range("class label " + std::to_string(labels[i]) + " outside [0, " +
                              std::to_string(model.cfg.classes) + ")");
    }
    idx[i] = static_cast<std::size_t>(labels[i]);
  }
  std::vector<double> temb;
  temb.reserve(t.size() * model.cfg.dim);
  for (int ti : t) {
    auto e = ops::sinusoidal_embed(ti, model.cfg.dim);
    temb.insert(temb.end(), e.values().begin(), e.values().end());
  }
  return ops::add(ops::gather_rows(model.class_embed, idx), Tensor({t.size(), model.cfg.dim}, std::move(temb)));
}

ForwardResult forward(const DitModel& model, const Tensor& patches, std::span<const int> t,
                      std::span<const int> labels, const ForwardOptions& opt) {
  const auto& cfg = model.cfg;
  const auto batch = labels.size();
  if (patches.rank() != 2 || patches.rows() != batch * cfg.tokens() || patches.cols() != cfg.patch_dim()) {
    throw ShapeError("forward: patches " + shape_str(patches.shape()) + " do not match batch " +
                     std::to_string(batch));
  }
  auto y = conditioning(model, t, labels);
  auto h = ops::add(model.patch_embed(patches), ops::concat_rows(std::vector<Tensor>(batch, model.pos)));

  ForwardResult result;
  auto rcfg = cfg.recursion;
  if (opt.latent_steps) rcfg.latent_steps = *opt.latent_steps;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const auto& block = model.blocks[l];
    if (opt.use_recursion && cfg.recursion_enabled && model.recursive[l]) {
      recursion::RecursionTrace trace;
      recursion::RecursionTrace* tp = opt.trace ? &trace : nullptr;
      auto r = recursion::recursive_block_forward(h, Tensor(), y, block, *model.recursive[l], rcfg, opt.control, tp,
                                                  opt.counters);
      h = r.out.x;
      for (auto& d : r.decisions) result.decisions.push_back(std::move(d));
      if (tp) {
        tp->diffusion_t.assign(t.begin(), t.end());
        tp->condition.assign(labels.begin(), labels.end());
        (*opt.trace)(l, trace);
      }
    } else {
      h = mmdit::block_forward(h, Tensor(), y, block).x;
    }
  }
  auto fm = model.final_mod(y);
  auto scale = ops::slice_cols(fm, 0, cfg.dim), shift = ops::slice_cols(fm, cfg.dim, 2 * cfg.dim);
  result.eps = model.head(mmdit::modulate(h, scale, shift));
  return result;
}

}  // namespace rsr::diffusion
