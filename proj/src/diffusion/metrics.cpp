// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/metrics.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <limits>

#include "rsr/numerics/tensor.hpp"

namespace rsr::diffusion {

namespace {

constexpr double kRidge = 1e-6;

Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool degenerate(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m, Eigen::EigenvaluesOnly);
  const double top = std::max(es.eigenvalues().maxCoeff(), 0.0);
  return es.eigenvalues().minCoeff() <= 1e-12 * std::max(top, 1.0);
}

}  // namespace

GaussianFit fit_gaussian(std::span<const double> features, std::size_t rows, std::size_t k) {
  if (rows < 2) throw ShapeError("fit_gaussian: need at least two rows");
  if (features.size() != rows * k) throw ShapeError("fit_gaussian: feature size mismatch");
  GaussianFit g;
  g.mean.assign(k, 0.0);
  g.cov.assign(k * k, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < k; ++i) g.mean[i] += features[r * k + i];
  for (auto& m : g.mean) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j)
        g.cov[i * k + j] += (features[r * k + i] - g.mean[i]) * (features[r * k + j] - g.mean[j]);
  for (auto& c : g.cov) c /= static_cast<double>(rows - 1);
  return g;
}

FrechetResult frechet_distance(const GaussianFit& a, const GaussianFit& b) {
  const auto k = a.mean.size();
  if (b.mean.size() != k) throw ShapeError("frechet_distance: dimension mismatch");
  Eigen::Map<const Eigen::MatrixXd> sa0(a.cov.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::Map<const Eigen::MatrixXd> sb0(b.cov.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  Eigen::MatrixXd sa = sa0, sb = sb0;
  FrechetResult res;
  const auto eye = Eigen::MatrixXd::Identity(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(k));
  if (degenerate(sa) || degenerate(sb)) {
    res.regularized = true;
    sa += kRidge * eye;
    sb += kRidge * eye;
  }
  double d2 = 0.0;
  for (std::size_t i = 0; i < k; ++i) d2 += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);
  Eigen::MatrixXd ra = sqrt_psd(sa);
  Eigen::MatrixXd inner = ra * sb * ra;
  inner = 0.5 * (inner + inner.transpose());
  const double tr = sa.trace() + sb.trace() - 2.0 * sqrt_psd(inner).trace();
  res.distance = d2 + std::max(tr, 0.0);
  return res;
}

double nearest_mean_accuracy(std::span<const double> samples, std::span<const int> labels,
                             const std::vector<std::vector<double>>& means) {
  if (labels.empty()) return 0.0;
  const auto px = samples.size() / labels.size();
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    int arg = -1;
    for (std::size_t k = 0; k < means.size(); ++k) {
      double d = 0.0;
      for (std::size_t p = 0; p < px; ++p) {
        const double e = samples[i * px + p] - means[k][p];
        d += e * e;
      }
      if (d < best) {
        best = d;
        arg = static_cast<int>(k);
      }
    }
    hits += arg == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

double mean_pairwise_distance(std::span<const double> samples, std::size_t rows, std::size_t dim) {
  if (rows < 2) return 0.0;
  double acc = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    for (std::size_t j = i + 1; j < rows; ++j) {
      double d = 0.0;
      for (std::size_t p = 0; p < dim; ++p) {
        const double e = samples[i * dim + p] - samples[j * dim + p];
        d += e * e;
      }
      acc += std::sqrt(d);
      ++pairs;
    }
  }
  return acc / static_cast<double>(pairs);
}

Evaluator::Evaluator(const ToyDataset& data, std::size_t k)
    : data_(&data), pca_(analysis::pca_fit(data.images, data.count, data.pixels(), k)) {
  auto feats = pca_.project(data.images, data.count);
  data_fit_ = fit_gaussian(feats, data.count, k);
  means_ = class_means(data);
}

Metrics Evaluator::evaluate(std::span<const double> samples, std::span<const int> labels) const {
  const auto px = data_->pixels();
  if (samples.size() != labels.size() * px) throw ShapeError("Evaluator: samples and labels disagree");
  Metrics m;
  auto feats = pca_.project(samples, labels.size());
  auto fr = frechet_distance(fit_gaussian(feats, labels.size(), pca_.k), data_fit_);
  m.frechet = fr.distance;
  m.frechet_regularized = fr.regularized;
  m.class_accuracy = nearest_mean_accuracy(samples, labels, means_);
  m.diversity = mean_pairwise_distance(samples, labels.size(), px);
  return m;
}

}  // namespace rsr::diffusion
