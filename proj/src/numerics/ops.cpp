// SPDX-License-Identifier: Apache-2.0

#include "rsr/numerics/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>

namespace rsr::ops {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
using StridedC = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using Strided = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

detail::Node& parent(detail::Node& n, std::size_t i) { return *n.parents[i]; }

bool wants(detail::Node& n, std::size_t i) { return n.parents[i]->requires_grad; }

void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_matrix(const Tensor& a, const char* op) {
  if (a.rank() != 2) {
    throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
  }
}

// Splits shape around `axis` into (outer, len, inner) for strided loops.
struct AxisView {
  std::size_t outer = 1, len = 1, inner = 1;
};

AxisView axis_view(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= s[i];
  v.len = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) v.inner *= s[i];
  return v;
}

std::size_t vector_len(const Tensor& v, std::size_t d, const char* op) {
  const bool ok = (v.rank() == 1 && v.dim(0) == d) || (v.rank() == 2 && v.dim(0) == 1 && v.dim(1) == d);
  if (!ok) throw ShapeError(std::string(op) + ": expected a vector of length " + std::to_string(d) +
                            ", got " + shape_str(v.shape()));
  return d;
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const auto m = a.rows(), k = a.cols(), n = b.cols();
  if (b.rows() != k) {
    throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  std::vector<double> out(m * n);
  Map(out.data(), m, n).noalias() = MapC(a.values().data(), m, k) * MapC(b.values().data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b}, [m, k, n](detail::Node& self) {
    MapC g(self.grad.data(), m, n);
    if (wants(self, 0)) {
      Map(parent(self, 0).grad_buffer().data(), m, k).noalias() +=
          g * MapC(parent(self, 1).value.data(), k, n).transpose();
    }
    if (wants(self, 1)) {
      Map(parent(self, 1).grad_buffer().data(), k, n).noalias() +=
          MapC(parent(self, 0).value.data(), m, k).transpose() * g;
    }
  });
}

Tensor transpose(const Tensor& a) {
  require_matrix(a, "transpose");
  const auto m = a.rows(), n = a.cols();
  std::vector<double> out(m * n);
  Map(out.data(), n, m) = MapC(a.values().data(), m, n).transpose();
  return make_result("transpose", {n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
    Map(parent(self, 0).grad_buffer().data(), m, n) += MapC(self.grad.data(), n, m).transpose();
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same(a, b, "add");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  return make_result("add", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    for (std::size_t p = 0; p < 2; ++p) {
      if (!wants(self, p)) continue;
      auto& g = parent(self, p).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same(a, b, "sub");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  return make_result("sub", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    if (wants(self, 0)) {
      auto& g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same(a, b, "mul");
  auto av = a.values(), bv = b.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  return make_result("mul", a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
    const auto& av = parent(self, 0).value;
    const auto& bv = parent(self, 1).value;
    if (wants(self, 0)) {
      auto& g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * bv[i];
    }
    if (wants(self, 1)) {
      auto& g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * av[i];
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * s;
  return make_result("scale", a.shape(), std::move(out), {a}, [s](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * s;
  });
}

Tensor square(const Tensor& a) {
  auto av = a.values();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * av[i];
  return make_result("square", a.shape(), std::move(out), {a}, [](detail::Node& self) {
    const auto& av = parent(self, 0).value;
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += 2.0 * av[i] * self.grad[i];
  });
}

Tensor add_row(const Tensor& x, const Tensor& v) {
  require_matrix(x, "add_row");
  const auto n = x.rows(), d = x.cols();
  vector_len(v, d, "add_row");
  auto xv = x.values(), vv = v.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] + vv[j];
  return make_result("add_row", {n, d}, std::move(out), {x, v}, [n, d](detail::Node& self) {
    if (wants(self, 0)) {
      auto& g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
    }
    if (wants(self, 1)) {
      auto& g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[j] += self.grad[i * d + j];
    }
  });
}

Tensor mul_col(const Tensor& x, const Tensor& w) {
  require_matrix(x, "mul_col");
  const auto n = x.rows(), d = x.cols();
  if (w.size() != n) {
    throw ShapeError("mul_col: weights " + shape_str(w.shape()) + " do not match rows of " +
                     shape_str(x.shape()));
  }
  auto xv = x.values(), wv = w.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = xv[i * d + j] * wv[i];
  return make_result("mul_col", {n, d}, std::move(out), {x, w}, [n, d](detail::Node& self) {
    const auto& xv = parent(self, 0).value;
    const auto& wv = parent(self, 1).value;
    if (wants(self, 0)) {
      auto& g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[i * d + j] * wv[i];
    }
    if (wants(self, 1)) {
      auto& g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < n; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += self.grad[i * d + j] * xv[i * d + j];
        g[i] += acc;
      }
    }
  });
}

Tensor repeat_rows(const Tensor& s, std::size_t n) {
  require_matrix(s, "repeat_rows");
  if (n == 0) throw ShapeError("repeat_rows: repeat count must be positive");
  const auto b = s.rows(), d = s.cols();
  auto sv = s.values();
  std::vector<double> out(b * n * d);
  for (std::size_t i = 0; i < b * n; ++i)
    std::copy_n(sv.begin() + (i / n) * d, d, out.begin() + i * d);
  return make_result("repeat_rows", {b * n, d}, std::move(out), {s}, [b, n, d](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < b * n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[(i / n) * d + j] += self.grad[i * d + j];
  });
}

Tensor group_mean_rows(const Tensor& x, std::size_t n) {
  require_matrix(x, "group_mean_rows");
  if (n == 0 || x.rows() % n != 0) {
    throw ShapeError("group_mean_rows: " + std::to_string(x.rows()) + " rows not divisible by " +
                     std::to_string(n));
  }
  const auto b = x.rows() / n, d = x.cols();
  auto xv = x.values();
  std::vector<double> out(b * d, 0.0);
  for (std::size_t i = 0; i < b * n; ++i)
    for (std::size_t j = 0; j < d; ++j) out[(i / n) * d + j] += xv[i * d + j];
  for (auto& o : out) o /= static_cast<double>(n);
  return make_result("group_mean_rows", {b, d}, std::move(out), {x}, [b, n, d](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    const double inv = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < b * n; ++i)
      for (std::size_t j = 0; j < d; ++j) g[i * d + j] += self.grad[(i / n) * d + j] * inv;
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  auto av = a.values();
  return make_result("reshape", std::move(shape), {av.begin(), av.end()}, {a}, [](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const auto d = parts.front().cols();
  std::size_t n = 0;
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    if (p.cols() != d) throw ShapeError("concat_rows: width mismatch " + shape_str(p.shape()));
    offsets.push_back(n * d);
    n += p.rows();
    auto v = p.values();
    out.insert(out.end(), v.begin(), v.end());
  }
  return make_result("concat_rows", {n, d}, std::move(out), parts, [offsets](detail::Node& self) {
    for (std::size_t p = 0; p < offsets.size(); ++p) {
      if (!wants(self, p)) continue;
      auto& g = parent(self, p).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[offsets[p] + i];
    }
  });
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const auto n = parts.front().rows();
  std::vector<std::size_t> widths;
  std::size_t d = 0;
  for (const auto& p : parts) {
    if (p.rows() != n) throw ShapeError("concat_cols: row mismatch " + shape_str(p.shape()));
    widths.push_back(p.cols());
    d += p.cols();
  }
  std::vector<double> out(n * d);
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    auto v = parts[p].values();
    for (std::size_t i = 0; i < n; ++i)
      std::copy_n(v.begin() + i * widths[p], widths[p], out.begin() + i * d + off);
    off += widths[p];
  }
  return make_result("concat_cols", {n, d}, std::move(out), parts, [n, d, widths](detail::Node& self) {
    std::size_t off = 0;
    for (std::size_t p = 0; p < widths.size(); ++p) {
      if (wants(self, p)) {
        auto& g = parent(self, p).grad_buffer();
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = 0; j < widths[p]; ++j) g[i * widths[p] + j] += self.grad[i * d + off + j];
      }
      off += widths[p];
    }
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_rows");
  if (begin >= end || end > a.rows()) {
    throw ShapeError("slice_rows: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for " + shape_str(a.shape()));
  }
  const auto d = a.cols();
  auto av = a.values();
  std::vector<double> out(av.begin() + begin * d, av.begin() + end * d);
  return make_result("slice_rows", {end - begin, d}, std::move(out), {a}, [begin, d](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[begin * d + i] += self.grad[i];
  });
}

Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  require_matrix(a, "slice_cols");
  if (begin >= end || end > a.cols()) {
    throw ShapeError("slice_cols: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for " + shape_str(a.shape()));
  }
  const auto n = a.rows(), d = a.cols(), w = end - begin;
  auto av = a.values();
  std::vector<double> out(n * w);
  for (std::size_t i = 0; i < n; ++i) std::copy_n(av.begin() + i * d + begin, w, out.begin() + i * w);
  return make_result("slice_cols", {n, w}, std::move(out), {a}, [n, d, w, begin](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < w; ++j) g[i * d + begin + j] += self.grad[i * w + j];
  });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> index) {
  require_matrix(a, "gather_rows");
  if (index.empty()) throw ShapeError("gather_rows: empty index");
  const auto n = a.rows(), d = a.cols();
  auto av = a.values();
  std::vector<double> out(index.size() * d);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) {
      throw std::out_of_range("gather_rows: index " + std::to_string(index[i]) + " >= " + std::to_string(n));
    }
    std::copy_n(av.begin() + index[i] * d, d, out.begin() + i * d);
  }
  std::vector<std::size_t> idx(index.begin(), index.end());
  return make_result("gather_rows", {index.size(), d}, std::move(out), {a},
                     [idx = std::move(idx), d](detail::Node& self) {
                       auto& g = parent(self, 0).grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i)
                         for (std::size_t j = 0; j < d; ++j) g[idx[i] * d + j] += self.grad[i * d + j];
                     });
}

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto v = axis_view(x.shape(), axis);
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mx = xv[base];
      for (std::size_t k = 1; k < v.len; ++k) mx = std::max(mx, xv[base + k * v.inner]);
      double z = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double e = std::exp(xv[base + k * v.inner] - mx);
        out[base + k * v.inner] = e;
        z += e;
      }
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] /= z;
    }
  }
  return make_result("softmax", x.shape(), std::move(out), {x}, [v](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    const auto& y = self.value;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t in = 0; in < v.inner; ++in) {
        const std::size_t base = o * v.len * v.inner + in;
        double dot = 0.0;
        for (std::size_t k = 0; k < v.len; ++k) dot += self.grad[base + k * v.inner] * y[base + k * v.inner];
        for (std::size_t k = 0; k < v.len; ++k) {
          const auto i = base + k * v.inner;
          g[i] += y[i] * (self.grad[i] - dot);
        }
      }
    }
  });
}

Tensor log_softmax_rows(const Tensor& x) {
  require_matrix(x, "log_softmax_rows");
  const auto n = x.rows(), m = x.cols();
  auto xv = x.values();
  std::vector<double> out(n * m);
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = xv.data() + i * m;
    const double mx = *std::max_element(row, row + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(row[j] - mx);
    const double lz = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = row[j] - lz;
  }
  return make_result("log_softmax", {n, m}, std::move(out), {x}, [n, m](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < n; ++i) {
      double gs = 0.0;
      for (std::size_t j = 0; j < m; ++j) gs += self.grad[i * m + j];
      for (std::size_t j = 0; j < m; ++j) g[i * m + j] += self.grad[i * m + j] - std::exp(self.value[i * m + j]) * gs;
    }
  });
}

Tensor layernorm(const Tensor& x, std::size_t axis, double eps) {
  const auto v = axis_view(x.shape(), axis);
  if (v.len < 2) throw ShapeError("layernorm: normalized axis needs at least 2 entries");
  auto xv = x.values();
  std::vector<double> out(xv.size());
  std::vector<double> inv_std(v.outer * v.inner);
  const double len = static_cast<double>(v.len);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t in = 0; in < v.inner; ++in) {
      const std::size_t base = o * v.len * v.inner + in;
      double mu = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) mu += xv[base + k * v.inner];
      mu /= len;
      double var = 0.0;
      for (std::size_t k = 0; k < v.len; ++k) {
        const double c = xv[base + k * v.inner] - mu;
        var += c * c;
      }
      var /= len;
      const double is = 1.0 / std::sqrt(var + eps);
      inv_std[o * v.inner + in] = is;
      for (std::size_t k = 0; k < v.len; ++k) out[base + k * v.inner] = (xv[base + k * v.inner] - mu) * is;
    }
  }
  return make_result("layernorm", x.shape(), std::move(out), {x},
                     [v, inv_std = std::move(inv_std), len](detail::Node& self) {
                       auto& g = parent(self, 0).grad_buffer();
                       const auto& y = self.value;
                       for (std::size_t o = 0; o < v.outer; ++o) {
                         for (std::size_t in = 0; in < v.inner; ++in) {
                           const std::size_t base = o * v.len * v.inner + in;
                           double gm = 0.0, gy = 0.0;
                           for (std::size_t k = 0; k < v.len; ++k) {
                             const auto i = base + k * v.inner;
                             gm += self.grad[i];
                             gy += self.grad[i] * y[i];
                           }
                           gm /= len;
                           gy /= len;
                           const double is = inv_std[o * v.inner + in];
                           for (std::size_t k = 0; k < v.len; ++k) {
                             const auto i = base + k * v.inner;
                             g[i] += is * (self.grad[i] - gm - y[i] * gy);
                           }
                         }
                       }
                     });
}

Tensor gelu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
  return make_result("gelu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = parent(self, 0).value;
    auto& g = parent(self, 0).grad_buffer();
    constexpr double inv_sqrt_2pi = 0.3989422804014327;
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double cdf = 0.5 * (1.0 + std::erf(xv[i] * std::numbers::sqrt2 / 2.0));
      const double pdf = inv_sqrt_2pi * std::exp(-0.5 * xv[i] * xv[i]);
      g[i] += self.grad[i] * (cdf + xv[i] * pdf);
    }
  });
}

Tensor silu(const Tensor& x) {
  auto xv = x.values();
  std::vector<double> out(xv.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] / (1.0 + std::exp(-xv[i]));
  return make_result("silu", x.shape(), std::move(out), {x}, [](detail::Node& self) {
    const auto& xv = parent(self, 0).value;
    auto& g = parent(self, 0).grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double s = 1.0 / (1.0 + std::exp(-xv[i]));
      g[i] += self.grad[i] * s * (1.0 + xv[i] * (1.0 - s));
    }
  });
}

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return make_result("sum", {1}, {s}, {x}, [](detail::Node& self) {
    auto& g = parent(self, 0).grad_buffer();
    for (auto& gi : g) gi += self.grad[0];
  });
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.size())); }

Tensor mse(const Tensor& pred, const Tensor& target) {
  require_same(pred, target, "mse");
  auto pv = pred.values(), tv = target.values();
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) s += (pv[i] - tv[i]) * (pv[i] - tv[i]);
  const double n = static_cast<double>(pv.size());
  return make_result("mse", {1}, {s / n}, {pred, target}, [n](detail::Node& self) {
    const auto& pv = parent(self, 0).value;
    const auto& tv = parent(self, 1).value;
    const double c = 2.0 * self.grad[0] / n;
    if (wants(self, 0)) {
      auto& g = parent(self, 0).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += c * (pv[i] - tv[i]);
    }
    if (wants(self, 1)) {
      auto& g = parent(self, 1).grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] -= c * (pv[i] - tv[i]);
    }
  });
}

Tensor cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_matrix(logits, "cross_entropy");
  const auto n = logits.rows(), m = logits.cols();
  if (labels.size() != n) throw ShapeError("cross_entropy: label count does not match rows");
  std::vector<std::size_t> picks(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= m) {
      throw std::out_of_range("cross_entropy: label " + std::to_string(labels[i]) + " out of range");
    }
    picks[i] = i * m + static_cast<std::size_t>(labels[i]);
  }
  auto lsm = reshape(log_softmax_rows(logits), {n * m, 1});
  return scale(sum(gather_rows(lsm, picks)), -1.0 / static_cast<double>(n));
}

Tensor straight_through(const Tensor& soft, const Tensor& hard) {
  require_same(soft, hard, "straight_through");
  auto hv = hard.values();
  return make_result("straight_through", soft.shape(), {hv.begin(), hv.end()}, {soft},
                     [](detail::Node& self) {
                       auto& g = parent(self, 0).grad_buffer();
                       for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
                     });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t groups,
                 std::size_t heads, double scale) {
  require_same(q, k, "attention");
  require_same(q, v, "attention");
  require_matrix(q, "attention");
  const auto rows = q.rows(), d = q.cols();
  if (groups == 0 || rows % groups != 0) throw ShapeError("attention: rows not divisible into groups");
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const auto s = rows / groups, dh = d / heads;
  auto probs = std::make_shared<std::vector<double>>(attention_probs(q, k, groups, heads, scale));
  std::vector<double> out(rows * d);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = gi * s * d + h * dh;
      MapC p(probs->data() + (gi * heads + h) * s * s, s, s);
      Strided(out.data() + off, s, dh, Eigen::OuterStride<>(d)).noalias() =
          p * StridedC(v.values().data() + off, s, dh, Eigen::OuterStride<>(d));
    }
  }
  return make_result("attention", {rows, d}, std::move(out), {q, k, v},
                     [probs, groups, heads, s, d, dh, scale](detail::Node& self) {
                       const auto& qv = parent(self, 0).value;
                       const auto& kv = parent(self, 1).value;
                       const auto& vv = parent(self, 2).value;
                       const bool gq = wants(self, 0), gk = wants(self, 1), gv = wants(self, 2);
                       RowMat dp(s, s), ds(s, s);
                       for (std::size_t gi = 0; gi < groups; ++gi) {
                         for (std::size_t h = 0; h < heads; ++h) {
                           const auto off = gi * s * d + h * dh;
                           const Eigen::OuterStride<> st(d);
                           MapC p(probs->data() + (gi * heads + h) * s * s, s, s);
                           StridedC go(self.grad.data() + off, s, dh, st);
                           if (gv) {
                             Strided(parent(self, 2).grad_buffer().data() + off, s, dh, st).noalias() +=
                                 p.transpose() * go;
                           }
                           if (!gq && !gk) continue;
                           dp.noalias() = go * StridedC(vv.data() + off, s, dh, st).transpose();
                           for (std::size_t i = 0; i < s; ++i) {
                             const double dot = dp.row(i).dot(p.row(i));
                             for (std::size_t j = 0; j < s; ++j) ds(i, j) = p(i, j) * (dp(i, j) - dot) * scale;
                           }
                           if (gq) {
                             Strided(parent(self, 0).grad_buffer().data() + off, s, dh, st).noalias() +=
                                 ds * StridedC(kv.data() + off, s, dh, st);
                           }
                           if (gk) {
                             Strided(parent(self, 1).grad_buffer().data() + off, s, dh, st).noalias() +=
                                 ds.transpose() * StridedC(qv.data() + off, s, dh, st);
                           }
                         }
                       }
                     });
}

std::vector<double> attention_probs(const Tensor& q, const Tensor& k, std::size_t groups,
                                    std::size_t heads, double scale) {
  require_same(q, k, "attention_probs");
  const auto rows = q.rows(), d = q.cols();
  if (groups == 0 || rows % groups != 0) throw ShapeError("attention: rows not divisible into groups");
  if (heads == 0 || d % heads != 0) throw ShapeError("attention: width not divisible by heads");
  const auto s = rows / groups, dh = d / heads;
  std::vector<double> probs(groups * heads * s * s);
  for (std::size_t gi = 0; gi < groups; ++gi) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto off = gi * s * d + h * dh;
      Map p(probs.data() + (gi * heads + h) * s * s, s, s);
      p.noalias() = StridedC(q.values().data() + off, s, dh, Eigen::OuterStride<>(d)) *
                    StridedC(k.values().data() + off, s, dh, Eigen::OuterStride<>(d)).transpose();
      p *= scale;
      for (std::size_t i = 0; i < s; ++i) {
        const double mx = p.row(i).maxCoeff();
        p.row(i) = (p.row(i).array() - mx).exp();
        p.row(i) /= p.row(i).sum();
      }
    }
  }
  return probs;
}

Tensor sinusoidal_embed(double t, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) {
    throw ConfigError("sinusoidal_embed: dimension must be even and positive, got " + std::to_string(dim));
  }
  std::vector<double> out(dim);
  for (std::size_t i = 0; i < dim / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(dim));
    out[2 * i] = std::sin(t * freq);
    out[2 * i + 1] = std::cos(t * freq);
  }
  return Tensor({dim}, std::move(out));
}

}  // namespace rsr::ops
