// SPDX-License-Identifier: Apache-2.0
//
// Synthetic class-conditioned image sets in [-1, 1].

#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace rsr::diffusion {

enum class DatasetKind {
  Shapes,     // one geometric figure per class, jittered position and size
  Gaussians,  // one blob per class at a class-specific location
};

DatasetKind parse_dataset_kind(const std::string& s);
std::string to_string(DatasetKind k);

struct ToyDataset {
  std::size_t count = 0, classes = 0, channels = 1, height = 0, width = 0;
  std::vector<double> images;  // count x C x H x W, row-major
  std::vector<int> labels;

  std::size_t pixels() const { return channels * height * width; }
  std::span<const double> image(std::size_t i) const { return {images.data() + i * pixels(), pixels()}; }
};

/// Labels cycle 0..K-1 so every class gets count/K images (+1 for the first
/// count % K classes). Each image draws from its own derived stream.
ToyDataset make_dataset(DatasetKind kind, std::size_t count, std::size_t classes, std::size_t height,
                        std::size_t width, std::uint64_t seed);

/// Renders one image of `label` from a stream seeded by `stream_seed`.
std::vector<double> render_example(DatasetKind kind, int label, std::size_t classes, std::size_t height,
                                   std::size_t width, std::uint64_t stream_seed);

/// K x pixels per-class mean images.
std::vector<std::vector<double>> class_means(const ToyDataset& ds);

inline constexpr std::size_t kMaxShapeClasses = 6;

}  // namespace rsr::diffusion
