// SPDX-License-Identifier: Apache-2.0
//
// Plain-loop pieces of the modulated block, for oracles.

#pragma once

#include "rsr/mmdit/block.hpp"
#include "support/plain.hpp"

namespace rsr::plain {

// One stream of the block computed with plain loops.
struct Stream {
  Mat alpha, beta, gamma, delta, eps, zeta;
};

inline Stream modulation(const mmdit::StreamParams& s, const Mat& y) {
  auto raw = add_row(matmul(y, from(s.mod.weight)), from(s.mod.bias)[0]);
  const auto d = s.wq.rows();
  return {cols(raw, 0, d),         cols(raw, d, 2 * d),     cols(raw, 2 * d, 3 * d),
          cols(raw, 3 * d, 4 * d), cols(raw, 4 * d, 5 * d), cols(raw, 5 * d, 6 * d)};
}

inline Mat affine(const Mat& n, const Mat& scale, const Mat& shift) {
  auto out = n;
  for (auto& row : out)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = scale[0][j] * row[j] + shift[0][j];
  return out;
}

inline Mat gated(const Mat& h, const Mat& gate, const Mat& branch) {
  auto out = h;
  for (std::size_t i = 0; i < h.size(); ++i)
    for (std::size_t j = 0; j < h[0].size(); ++j) out[i][j] += gate[0][j] * branch[i][j];
  return out;
}

inline Mat mlp(const Mlp& m, const Mat& x) {
  auto h = gelu(add_row(matmul(x, from(m.fc1.weight)), from(m.fc1.bias)[0]));
  return add_row(matmul(h, from(m.fc2.weight)), from(m.fc2.bias)[0]);
}

}  // namespace rsr::plain
