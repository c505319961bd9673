// SPDX-License-Identifier: Apache-2.0

#include "rsr/mmdit/block.hpp"

#include <cmath>
#include <vector>

#include "rsr/numerics/ops.hpp"

namespace rsr::mmdit {

namespace {

StreamParams init_stream(std::size_t d, Rng& rng, bool zero_gates) {
  StreamParams s;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  s.wq = param_normal({d, d}, sd, rng);
  s.wk = param_normal({d, d}, sd, rng);
  s.wv = param_normal({d, d}, sd, rng);
  // W_O starts near identity.
  s.wo = param_normal({d, d}, 0.02, rng);
  auto wo = s.wo.mutable_values();
  for (std::size_t i = 0; i < d; ++i) wo[i * d + i] += 1.0;
  s.mlp = Mlp(d, 4 * d, d, rng);

  s.mod = Linear::zeros(d, 6 * d);
  auto b = s.mod.bias.mutable_values();
  if (zero_gates) {
    for (std::size_t i = 0; i < d; ++i) {
      b[0 * d + i] = 1.0;  // alpha
      b[3 * d + i] = 1.0;  // delta
    }
  } else {
    auto w = s.mod.weight.mutable_values();
    for (auto& x : w) x = 0.1 * sd * rng.normal();
    for (std::size_t i = 0; i < 6 * d; ++i) b[i] = 0.3 * rng.normal();
    for (std::size_t i = 0; i < d; ++i) {
      b[0 * d + i] += 1.0;
      b[3 * d + i] += 1.0;
    }
  }
  return s;
}

Tensor expand(const Tensor& per_sample, std::size_t rows) {
  const auto b = per_sample.rows();
  if (rows % b != 0) {
    throw ShapeError("modulation batch " + std::to_string(b) + " does not divide " + std::to_string(rows) +
                     " token rows");
  }
  return rows == b ? per_sample : ops::repeat_rows(per_sample, rows / b);
}

Tensor as_rows(const Tensor& v) { return v.rank() == 1 ? ops::reshape(v, {1, v.dim(0)}) : v; }

}  // namespace

Modulation StreamParams::modulation(const Tensor& y) const {
  const auto d = wq.rows();
  auto raw = mod(y);
  return {ops::slice_cols(raw, 0, d),     ops::slice_cols(raw, d, 2 * d),
          ops::slice_cols(raw, 2 * d, 3 * d), ops::slice_cols(raw, 3 * d, 4 * d),
          ops::slice_cols(raw, 4 * d, 5 * d), ops::slice_cols(raw, 5 * d, 6 * d)};
}

void StreamParams::collect(ParamList& out, const std::string& prefix) const {
  mod.collect(out, prefix + ".mod");
  out.emplace_back(prefix + ".wq", wq);
  out.emplace_back(prefix + ".wk", wk);
  out.emplace_back(prefix + ".wv", wv);
  out.emplace_back(prefix + ".wo", wo);
  mlp.collect(out, prefix + ".mlp");
}

MmditBlockParams MmditBlockParams::init(std::size_t dim, std::size_t heads, bool joint, Rng& rng,
                                        bool zero_gates) {
  if (heads == 0 || dim % heads != 0) {
    throw ConfigError("model dimension " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  MmditBlockParams p;
  p.dim = dim;
  p.heads = heads;
  p.vision = init_stream(dim, rng, zero_gates);
  if (joint) p.text = init_stream(dim, rng, zero_gates);
  return p;
}

double MmditBlockParams::attn_scale() const {
  return 1.0 / std::sqrt(static_cast<double>(dim / heads));
}

void MmditBlockParams::collect(ParamList& out, const std::string& prefix) const {
  vision.collect(out, prefix + ".x");
  if (text) text->collect(out, prefix + ".c");
}

Tensor modulate(const Tensor& tokens, const Tensor& scale, const Tensor& shift, double eps) {
  if (tokens.rank() != 2) throw ShapeError("modulate: tokens must be a matrix, got " + shape_str(tokens.shape()));
  auto s = as_rows(scale), b = as_rows(shift);
  if (s.cols() != tokens.cols() || b.cols() != tokens.cols() || s.shape() != b.shape()) {
    throw ShapeError("modulate: tokens " + shape_str(tokens.shape()) + " vs scale " + shape_str(scale.shape()) +
                     " / shift " + shape_str(shift.shape()));
  }
  auto n = ops::layernorm(tokens, 1, eps);
  const auto rows = tokens.rows();
  return ops::add(ops::mul(n, expand(s, rows)), expand(b, rows));
}

Qkv project(const Tensor& tokens, const StreamParams& p) {
  return {ops::matmul(tokens, p.wq), ops::matmul(tokens, p.wk), ops::matmul(tokens, p.wv)};
}

std::pair<Tensor, Tensor> attention_core(const Qkv* text, const Qkv& vision, std::size_t batch,
                                         std::size_t heads, double scale) {
  const auto nx_rows = vision.q.rows();
  if (batch == 0 || nx_rows % batch != 0) throw ShapeError("attention_core: vision rows not divisible by batch");
  const auto nx = nx_rows / batch;
  if (!text) {
    return {ops::attention(vision.q, vision.k, vision.v, batch, heads, scale), Tensor()};
  }
  const auto nc_rows = text->q.rows();
  if (nc_rows % batch != 0) throw ShapeError("attention_core: text rows not divisible by batch");
  const auto nc = nc_rows / batch;
  const auto s = nc + nx;

  // Per-sample [text; vision] order inside one stacked tensor.
  std::vector<std::size_t> joint(batch * s), back_x(batch * nx), back_c(batch * nc);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < nc; ++i) {
      joint[b * s + i] = b * nc + i;
      back_c[b * nc + i] = b * s + i;
    }
    for (std::size_t i = 0; i < nx; ++i) {
      joint[b * s + nc + i] = nc_rows + b * nx + i;
      back_x[b * nx + i] = b * s + nc + i;
    }
  }
  auto cat = [&](const Tensor& c, const Tensor& x) { return ops::gather_rows(ops::concat_rows({c, x}), joint); };
  auto out = ops::attention(cat(text->q, vision.q), cat(text->k, vision.k), cat(text->v, vision.v), batch, heads,
                            scale);
  return {ops::gather_rows(out, back_x), ops::gather_rows(out, back_c)};
}

std::pair<Tensor, Tensor> joint_attention(const Tensor& x_mod, const Tensor& c_mod, const MmditBlockParams& p,
                                          std::size_t batch) {
  if (x_mod.cols() != p.dim) throw ShapeError("joint_attention: vision width " + shape_str(x_mod.shape()));
  auto vis = project(x_mod, p.vision);
  std::optional<Qkv> txt;
  if (c_mod.defined()) {
    if (!p.text) throw ShapeError("joint_attention: text tokens given to a block without a text stream");
    if (c_mod.cols() != p.dim) throw ShapeError("joint_attention: text width " + shape_str(c_mod.shape()));
    txt = project(c_mod, *p.text);
  }
  auto [ax, ac] = attention_core(txt ? &*txt : nullptr, vis, batch, p.heads, p.attn_scale());
  Tensor oc = ac.defined() ? ops::matmul(ac, p.text->wo) : Tensor();
  return {ops::matmul(ax, p.vision.wo), oc};
}

Streams attention_residual(const Streams& in, const Streams& attn_out, const Modulation& mx, const Modulation* mc) {
  Streams out;
  out.x = ops::add(in.x, ops::mul(expand(mx.gamma, in.x.rows()), attn_out.x));
  if (in.c.defined()) out.c = ops::add(in.c, ops::mul(expand(mc->gamma, in.c.rows()), attn_out.c));
  return out;
}

Streams mlp_sublayer(const Streams& h, const MmditBlockParams& p, const Modulation& mx, const Modulation* mc) {
  auto branch = [&](const Tensor& t, const StreamParams& sp, const Modulation& m) {
    auto inner = sp.mlp(modulate(t, m.delta, m.epsilon, p.ln_eps));
    return ops::add(t, ops::mul(expand(m.zeta, t.rows()), inner));
  };
  Streams out;
  out.x = branch(h.x, p.vision, mx);
  if (h.c.defined()) out.c = branch(h.c, *p.text, *mc);
  return out;
}

Streams block_forward(const Tensor& x, const Tensor& c, const Tensor& y, const MmditBlockParams& p) {
  if (y.rank() != 2 || y.cols() != p.dim) {
    throw ShapeError("block_forward: conditioning must be [batch x D], got " + shape_str(y.shape()));
  }
  const auto batch = y.rows();
  auto mx = p.vision.modulation(y);
  std::optional<Modulation> mc;
  Tensor c_mod;
  if (c.defined()) {
    if (!p.text) throw ShapeError("block_forward: text tokens given to a block without a text stream");
    mc = p.text->modulation(y);
    c_mod = modulate(c, mc->alpha, mc->beta, p.ln_eps);
  }
  auto x_mod = modulate(x, mx.alpha, mx.beta, p.ln_eps);
  auto [ax, ac] = joint_attention(x_mod, c_mod, p, batch);
  const Modulation* mcp = mc ? &*mc : nullptr;
  auto h = attention_residual({x, c}, {ax, ac}, mx, mcp);
  return mlp_sublayer(h, p, mx, mcp);
}

}  // namespace rsr::mmdit
