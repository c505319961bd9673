// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale sample quality: Fréchet distance between Gaussian fits of
// pixel-PCA features (not Inception features), nearest-class-mean accuracy
// and mean pairwise L2 diversity.

#pragma once

#include <span>
#include <vector>

#include "rsr/analysis/pca.hpp"
#include "rsr/diffusion/data.hpp"

namespace rsr::diffusion {

struct GaussianFit {
  std::vector<double> mean;  // k
  std::vector<double> cov;   // k x k
};

GaussianFit fit_gaussian(std::span<const double> features, std::size_t rows, std::size_t k);

struct FrechetResult {
  double distance = 0.0;
  bool regularized = false;  // a covariance needed the 1e-6 I ridge
};

/// ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2).
FrechetResult frechet_distance(const GaussianFit& a, const GaussianFit& b);

struct Metrics {
  double frechet = 0.0;
  bool frechet_regularized = false;
  double class_accuracy = 0.0;  // fraction nearest (L2) to own class mean
  double diversity = 0.0;       // mean pairwise L2 distance
};

class Evaluator {
 public:
  /// Fits a k-component PCA feature space on the dataset.
  Evaluator(const ToyDataset& data, std::size_t k = 32);

  Metrics evaluate(std::span<const double> samples, std::span<const int> labels) const;
  const analysis::Pca& features() const { return pca_; }

 private:
  const ToyDataset* data_;
  analysis::Pca pca_;
  GaussianFit data_fit_;
  std::vector<std::vector<double>> means_;
};

double nearest_mean_accuracy(std::span<const double> samples, std::span<const int> labels,
                             const std::vector<std::vector<double>>& means);
double mean_pairwise_distance(std::span<const double> samples, std::size_t rows, std::size_t dim);

}  // namespace rsr::diffusion
