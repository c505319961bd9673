// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <vector>

#include "rsr/numerics/nn.hpp"

namespace rsr {

struct AdamWConfig {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Decoupled-weight-decay Adam over a fixed parameter list.
class AdamW {
 public:
  AdamW(ParamList params, AdamWConfig cfg);

  /// Applies one update from the accumulated grads, then clears them.
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_lr(double lr) { cfg_.lr = lr; }

 private:
  ParamList params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

/// Scales all grads so their global L2 norm is at most max_norm. Returns the pre-clip norm.
double clip_grad_norm(const ParamList& params, double max_norm);

}  // namespace rsr
