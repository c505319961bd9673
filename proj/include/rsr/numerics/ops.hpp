// SPDX-License-Identifier: Apache-2.0
//
// Differentiable tensor operations. Matrices are row-major [rows x cols];
// token sets are stored as [batch*tokens x width].

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "rsr/numerics/tensor.hpp"

namespace rsr::ops {

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor square(const Tensor& a);

/// x[n x d] + v[d] (or v[1 x d]) on every row.
Tensor add_row(const Tensor& x, const Tensor& v);
/// Each row of x[n x d] times the matching entry of w[n] (or [n x 1]).
Tensor mul_col(const Tensor& x, const Tensor& w);
/// s[b x d] -> [b*n x d], row i of the output is row i / n of s.
Tensor repeat_rows(const Tensor& s, std::size_t n);
/// Mean over consecutive groups of n rows: [b*n x d] -> [b x d].
Tensor group_mean_rows(const Tensor& x, std::size_t n);

Tensor reshape(const Tensor& a, Shape shape);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end);
/// out[i] = a[index[i]]; backward scatter-adds.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index);

Tensor softmax(const Tensor& x, std::size_t axis);
Tensor log_softmax_rows(const Tensor& x);
/// Normalizes along `axis` to zero mean, unit variance. No affine part.
Tensor layernorm(const Tensor& x, std::size_t axis, double eps = 1e-6);
Tensor gelu(const Tensor& x);
Tensor silu(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mse(const Tensor& pred, const Tensor& target);
/// Mean cross-entropy of logits[n x m] against class ids.
Tensor cross_entropy(const Tensor& logits, std::span<const int> labels);

/// Forward value equals `hard` exactly; gradient flows into `soft` unchanged.
Tensor straight_through(const Tensor& soft, const Tensor& hard);

/// Scaled dot-product attention over `groups` independent sequences of
/// `seq` rows each, with `heads` column blocks of q/k/v[groups*seq x d].
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                 std::size_t heads, double scale);
/// Forward-only attention probabilities, [groups*heads*seq x seq].
std::vector<double> attention_probs(const Tensor& q, const Tensor& k, std::size_t groups,
                                    std::size_t heads, double scale);

/// Interleaved sin/cos embedding over frequencies 10000^(-2i/dim).
Tensor sinusoidal_embed(double t, std::size_t dim);

}  // namespace rsr::ops
