// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <cstdint>
#include <span>
#include <vector>

#include "rsr/numerics/tensor.hpp"

namespace rsr {

/// Central differences (f(x+h e_i) - f(x-h e_i)) / 2h for every coordinate.
Tensor finite_diff_grad(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

/// Same, but perturbs the leaf `x` in place and evaluates a closure that reads
/// it. Values are restored bit-exactly afterwards.
Tensor finite_diff_grad_inplace(const std::function<double()>& f, Tensor& x, double h);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
double max_relative_error(std::span<const double> analytic, std::span<const double> numeric,
                          double floor = 1e-6);

}  // namespace rsr

namespace rsr {

/// Max relative error between backward() and central differences of
/// sum(f() ⊙ R) with a fixed Gaussian R, over every tensor in `inputs`
/// (which must require grad and be read by `f`).
double probe_gradient_error(const std::function<Tensor()>& f, std::vector<Tensor> inputs,
                            std::uint64_t probe_seed = 4242, double h = 1e-5, double floor = 1e-6);

}  // namespace rsr
