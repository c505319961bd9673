// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/sample.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rsr::diffusion {

std::vector<double> sample(const DitModel& model, const Schedule& schedule, std::span<const int> labels,
                           const SampleOptions& opt) {
  const auto& cfg = model.cfg;
  for (const auto& p : model.all_params()) {
    for (double v : p.second.values()) {
      if (!std::isfinite(v)) throw std::runtime_error("sample: parameter " + p.first + " is not finite");
    }
  }
  NoGradGuard guard;
  const auto n = labels.size();
  const auto px = cfg.pixels();
  std::vector<double> out(n * px);
  const Rng root(opt.seed);
  const std::size_t chunk = std::max<std::size_t>(opt.chunk, 1);

  for (std::size_t off = 0; off < n; off += chunk) {
    const auto b = std::min(chunk, n - off);
    std::vector<Rng> streams;
    std::vector<double> x(b * px);
    for (std::size_t i = 0; i < b; ++i) {
      streams.push_back(root.split(off + i));
      for (std::size_t p = 0; p < px; ++p) x[i * px + p] = streams[i].normal();
    }
    std::vector<int> lab(labels.begin() + static_cast<long>(off), labels.begin() + static_cast<long>(off + b));
    for (int t = schedule.steps; t >= 1; --t) {
      std::vector<int> ts(b, t);
      ForwardOptions fo;
      fo.use_recursion = opt.use_recursion;
      fo.latent_steps = opt.latent_steps;
      TraceSink sink;
      if (opt.trace) {
        sink = [&](std::size_t layer, recursion::RecursionTrace& tr) {
          tr.diffusion_steps = schedule.steps;
          opt.trace(off, t, layer, tr);
        };
        fo.trace = &sink;
      }
      auto eps = unpatchify(
          forward(model, Tensor({b * cfg.tokens(), cfg.patch_dim()}, patchify(x, b, cfg)), ts, lab, fo).eps.values(),
          b, cfg);
      const auto ti = static_cast<std::size_t>(t);
      const double abar = schedule.alpha_bar[ti], abar_prev = schedule.alpha_bar[ti - 1];
      const double beta = schedule.beta[ti];
      const double c0 = std::sqrt(abar_prev) * beta / (1.0 - abar);
      const double ct = std::sqrt(1.0 - beta) * (1.0 - abar_prev) / (1.0 - abar);
      const double sigma = std::sqrt(schedule.posterior_variance(t));
      for (std::size_t i = 0; i < b; ++i) {
        for (std::size_t p = 0; p < px; ++p) {
          double& v = x[i * px + p];
          double x0 = (v - std::sqrt(1.0 - abar) * eps[i * px + p]) / std::sqrt(abar);
          x0 = std::clamp(x0, -1.0, 1.0);
          double mean = c0 * x0 + ct * v;
          v = t > 1 ? mean + sigma * streams[i].normal() : mean;
        }
      }
    }
    for (auto& v : x) v = std::clamp(v, -1.0, 1.0);
    std::copy(x.begin(), x.end(), out.begin() + static_cast<long>(off * px));
  }
  return out;
}

}  // namespace rsr::diffusion
