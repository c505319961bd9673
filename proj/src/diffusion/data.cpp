// SPDX-License-Identifier: Apache-2.0

#include "rsr/diffusion/data.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "rsr/numerics/rng.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::diffusion {

DatasetKind parse_dataset_kind(const std::string& s) {
  if (s == "shapes") return DatasetKind::Shapes;
  if (s == "gaussians") return DatasetKind::Gaussians;
  throw ConfigError("dataset kind must be shapes or gaussians, got '" + s + "'");
}

std::string to_string(DatasetKind k) { return k == DatasetKind::Shapes ? "shapes" : "gaussians"; }

namespace {

bool inside_shape(int label, double dx, double dy, double r) {
  const double ax = std::abs(dx), ay = std::abs(dy);
  const double t = r / 3.0;
  switch (label) {
    case 0:  // filled square
      return ax <= r && ay <= r;
    case 1: {  // ring
      const double d = std::hypot(dx, dy);
      return d <= r && d >= r - std::max(1.2, 0.35 * r);
    }
    case 2:  // three horizontal bars
      return ax <= r && ay <= r && static_cast<int>(std::floor((dy + r) / (0.4 * r))) % 2 == 0;
    case 3:  // plus sign
      return (ax <= t && ay <= r) || (ay <= t && ax <= r);
    case 4:  // three vertical bars
      return ax <= r && ay <= r && static_cast<int>(std::floor((dx + r) / (0.4 * r))) % 2 == 0;
    case 5:  // diagonal cross
      return ax <= r && ay <= r && (std::abs(dx - dy) <= t || std::abs(dx + dy) <= t);
  }
  return false;
}

}  // namespace

std::vector<double> render_example(DatasetKind kind, int label, std::size_t classes, std::size_t height,
                                   std::size_t width, std::uint64_t stream_seed) {
  Rng rng(stream_seed);
  std::vector<double> img(height * width, -1.0);
  const double h = static_cast<double>(height), w = static_cast<double>(width);
  const double jitter = std::max(1.0, h / 16.0);
  const double cx = w / 2.0 + rng.uniform(-jitter, jitter);
  const double cy = h / 2.0 + rng.uniform(-jitter, jitter);
  if (kind == DatasetKind::Shapes) {
    const double r = rng.uniform(0.22, 0.32) * std::min(h, w);
    for (std::size_t i = 0; i < height; ++i)
      for (std::size_t j = 0; j < width; ++j)
        if (inside_shape(label, static_cast<double>(j) + 0.5 - cx, static_cast<double>(i) + 0.5 - cy, r))
          img[i * width + j] = 1.0;
  } else {
    const double angle = 2.0 * std::numbers::pi * label / static_cast<double>(classes);
    const double bx = cx + 0.25 * w * std::cos(angle), by = cy + 0.25 * h * std::sin(angle);
    const double sigma = std::min(h, w) / 8.0 * rng.uniform(0.85, 1.15);
    for (std::size_t i = 0; i < height; ++i) {
      for (std::size_t j = 0; j < width; ++j) {
        const double dx = static_cast<double>(j) + 0.5 - bx, dy = static_cast<double>(i) + 0.5 - by;
        img[i * width + j] = -1.0 + 2.0 * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
      }
    }
  }
  return img;
}

ToyDataset make_dataset(DatasetKind kind, std::size_t count, std::size_t classes, std::size_t height,
                        std::size_t width, std::uint64_t seed) {
  if (classes < 2) throw ConfigError("dataset needs at least 2 classes");
  if (kind == DatasetKind::Shapes && classes > kMaxShapeClasses) {
    throw ConfigError("shapes dataset supports at most " + std::to_string(kMaxShapeClasses) + " classes");
  }
  if (height < 4 || width < 4) throw ConfigError("dataset images must be at least 4x4");
  if (count == 0) throw ConfigError("dataset count must be positive");
  ToyDataset ds;
  ds.count = count;
  ds.classes = classes;
  ds.height = height;
  ds.width = width;
  ds.images.reserve(count * height * width);
  const Rng root(seed);
  for (std::size_t i = 0; i < count; ++i) {
    const int label = static_cast<int>(i % classes);
    auto img = render_example(kind, label, classes, height, width, root.split(i).next_u64());
    ds.images.insert(ds.images.end(), img.begin(), img.end());
    ds.labels.push_back(label);
  }
  return ds;
}

std::vector<std::vector<double>> class_means(const ToyDataset& ds) {
  std::vector<std::vector<double>> means(ds.classes, std::vector<double>(ds.pixels(), 0.0));
  std::vector<double> n(ds.classes, 0.0);
  for (std::size_t i = 0; i < ds.count; ++i) {
    auto img = ds.image(i);
    auto& m = means[static_cast<std::size_t>(ds.labels[i])];
    for (std::size_t p = 0; p < img.size(); ++p) m[p] += img[p];
    n[static_cast<std::size_t>(ds.labels[i])] += 1.0;
  }
  for (std::size_t k = 0; k < ds.classes; ++k)
    for (auto& v : means[k]) v /= std::max(n[k], 1.0);
  return means;
}

}  // namespace rsr::diffusion
