// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace rsr::analysis {

struct Pca {
  std::size_t dim = 0;
  std::size_t k = 0;
  std::vector<double> mean;         // dim
  std::vector<double> basis;        // k x dim, rows are components
  std::vector<double> eigenvalues;  // all dim covariance eigenvalues, descending

  /// rows x k projections of `rows` x dim data.
  std::vector<double> project(std::span<const double> data, std::size_t rows) const;
};

/// Top-k principal axes of `rows` x `dim` data (population covariance).
/// Components are sign-fixed so the first nonzero entry is positive.
Pca pca_fit(std::span<const double> data, std::size_t rows, std::size_t dim, std::size_t k);

}  // namespace rsr::analysis
