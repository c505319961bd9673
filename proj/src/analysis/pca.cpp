// SPDX-License-Identifier: Apache-2.0

#include "rsr/analysis/pca.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <string>

#include "rsr/numerics/tensor.hpp"

namespace rsr::analysis {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Pca pca_fit(std::span<const double> data, std::size_t rows, std::size_t dim, std::size_t k) {
  if (data.size() != rows * dim) throw ShapeError("pca_fit: data size does not match rows x dim");
  if (k < 1 || k > std::min(rows, dim)) {
    throw ShapeError("pca_fit: k=" + std::to_string(k) + " must lie in [1, min(" + std::to_string(rows) + ", " +
                     std::to_string(dim) + ")]");
  }
  Eigen::Map<const RowMat> x(data.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(dim));
  Eigen::RowVectorXd mu = x.colwise().mean();
  RowMat centered = x.rowwise() - mu;
  Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(rows);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error("pca_fit: eigendecomposition failed");

  Pca p;
  p.dim = dim;
  p.k = k;
  p.mean.assign(mu.data(), mu.data() + dim);
  // Eigen returns ascending eigenvalues.
  for (Eigen::Index i = static_cast<Eigen::Index>(dim) - 1; i >= 0; --i) p.eigenvalues.push_back(es.eigenvalues()(i));
  p.basis.resize(k * dim);
  for (std::size_t c = 0; c < k; ++c) {
    Eigen::VectorXd v = es.eigenvectors().col(static_cast<Eigen::Index>(dim - 1 - c));
    for (Eigen::Index j = 0; j < v.size(); ++j) {
      if (std::abs(v(j)) > 1e-12) {
        if (v(j) < 0.0) v = -v;
        break;
      }
    }
    std::copy(v.data(), v.data() + dim, p.basis.begin() + static_cast<long>(c * dim));
  }
  return p;
}

std::vector<double> Pca::project(std::span<const double> data, std::size_t rows) const {
  if (data.size() != rows * dim) throw ShapeError("Pca::project: data size does not match rows x dim");
  std::vector<double> out(rows * k, 0.0);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < k; ++c) {
      double acc = 0.0;
      for (std::size_t j = 0; j < dim; ++j) acc += (data[r * dim + j] - mean[j]) * basis[c * dim + j];
      out[r * k + c] = acc;
    }
  }
  return out;
}

}  // namespace rsr::analysis
