// SPDX-License-Identifier: Apache-2.0

#include "rsr/numerics/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "rsr/numerics/ops.hpp"
#include "rsr/numerics/rng.hpp"

namespace rsr {

Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor probe = x.detach();
  return finite_diff_grad_inplace([&] { return f(probe).item(); }, probe, h);
}

Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, double h) {
  NoGradGuard no_grad;
  auto vals = x.mutable_values();
  std::vector<double> out(vals.size());
  for (std::size_t i = 0; i < vals.size(); ++i) {
    const double orig = vals[i];
    vals[i] = orig + h;
    const double fp = f();
    vals[i] = orig - h;
    const double fm = f();
    vals[i] = orig;
    out[i] = (fp - fm) / (2.0 * h);
  }
  return Tensor(x.shape(), std::move(out));
}

double max_relative_error(std::span<const double> analytic, std::span<const double> numeric, double floor) {
  if (analytic.size() != numeric.size()) throw ShapeError("max_relative_error: length mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace rsr

namespace rsr {

double probe_gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs, std::uint64_t probe_seed,
                            double h, double floor) {
  const auto shape = f().shape();
  Rng rng(probe_seed);
  std::vector<double> r;
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  r.reserve(n);
  for (std::size_t i = 0; i < n; ++i) r.push_back(rng.normal());
  const Tensor weights(shape, std::move(r));
  auto loss_of = [&] { return ops::sum(ops::mul(f(), weights)); };
  for (auto& t : inputs) t.zero_grad();
  backward(loss_of());
  double worst = 0.0;
  for (auto& t : inputs) {
    auto analytic = t.grad_tensor();
    auto numeric = finite_diff_grad_inplace([&] { return loss_of().item(); }, t, h);
    worst = std::max(worst, max_relative_error(analytic.values(), numeric.values(), floor));
  }
  for (auto& t : inputs) t.zero_grad();
  return worst;
}

}  // namespace rsr
