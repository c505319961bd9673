// SPDX-License-Identifier: Apache-2.0
//
// Straight-line reference arithmetic on nested vectors. Shares no code with
// the tensor library so it can serve as an oracle.

#pragma once

#include <cmath>
#include <vector>

#include "rsr/numerics/tensor.hpp"

namespace rsr::plain {

using Mat = std::vector<std::vector<double>>;

inline Mat from(const Tensor& t) {
  const std::size_t r = t.rank() == 1 ? 1 : t.rows(), c = t.rank() == 1 ? t.dim(0) : t.cols();
  Mat m(r, std::vector<double>(c));
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) m[i][j] = t.values()[i * c + j];
  return m;
}

inline std::vector<double> flat(const Mat& m) {
  std::vector<double> v;
  for (const auto& row : m) v.insert(v.end(), row.begin(), row.end());
  return v;
}

inline Mat matmul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

inline Mat transpose(const Mat& a) {
  Mat t(a[0].size(), std::vector<double>(a.size()));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) t[j][i] = a[i][j];
  return t;
}

inline Mat add(Mat a, const Mat& b) {
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = 0; j < a[0].size(); ++j) a[i][j] += b[i][j];
  return a;
}

inline Mat add_row(Mat a, const std::vector<double>& v) {
  for (auto& row : a)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] += v[j];
  return a;
}

inline Mat layernorm(Mat a, double eps) {
  for (auto& row : a) {
    double mu = 0.0;
    for (double v : row) mu += v;
    mu /= static_cast<double>(row.size());
    double var = 0.0;
    for (double v : row) var += (v - mu) * (v - mu);
    var /= static_cast<double>(row.size());
    for (double& v : row) v = (v - mu) / std::sqrt(var + eps);
  }
  return a;
}

inline Mat softmax_rows(Mat a) {
  for (auto& row : a) {
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double& v : row) z += (v = std::exp(v - mx));
    for (double& v : row) v /= z;
  }
  return a;
}

inline Mat gelu(Mat a) {
  for (auto& row : a)
    for (double& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
  return a;
}

inline Mat cols(const Mat& a, std::size_t b, std::size_t e) {
  Mat out(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out[i].assign(a[i].begin() + b, a[i].begin() + e);
  return out;
}

/// Multi-head attention over one sequence.
inline Mat attention(const Mat& q, const Mat& k, const Mat& v, std::size_t heads, double scale) {
  const std::size_t n = q.size(), d = q[0].size(), dh = d / heads;
  Mat out(n, std::vector<double>(d, 0.0));
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = cols(q, h * dh, (h + 1) * dh), kh = cols(k, h * dh, (h + 1) * dh), vh = cols(v, h * dh, (h + 1) * dh);
    auto s = matmul(qh, transpose(kh));
    for (auto& row : s)
      for (double& x : row) x *= scale;
    auto o = matmul(softmax_rows(s), vh);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < dh; ++j) out[i][h * dh + j] = o[i][j];
  }
  return out;
}

}  // namespace rsr::plain
