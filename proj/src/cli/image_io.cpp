// SPDX-License-Identifier: Apache-2.0

#include "rsr/cli/image_io.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>

#include "rsr/analysis/export.hpp"
#include "rsr/numerics/tensor.hpp"

namespace rsr::cli {

namespace {

void check(std::span<const double> pixels, std::size_t height, std::size_t width) {
  if (pixels.size() != height * width || height == 0 || width == 0)
    throw ShapeError("image buffer of " + std::to_string(pixels.size()) + " values is not " + std::to_string(height) +
                     "x" + std::to_string(width));
}

std::string header(const char* magic, std::size_t height, std::size_t width) {
  return std::string(magic) + "\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
}

}  // namespace

std::uint8_t to_byte(double v) {
  const double c = std::clamp(std::isfinite(v) ? v : -1.0, -1.0, 1.0);
  return static_cast<std::uint8_t>(std::lround((c + 1.0) * 127.5));
}

std::string encode_pgm(std::span<const double> pixels, std::size_t height, std::size_t width) {
  check(pixels, height, width);
  auto out = header("P5", height, width);
  for (double v : pixels) out.push_back(static_cast<char>(to_byte(v)));
  return out;
}

std::string encode_ppm(std::span<const double> pixels, std::size_t height, std::size_t width) {
  check(pixels, height, width);
  // -1 dark blue, 0 pale ice, +1 gold
  constexpr std::array<double, 3> lo{20, 30, 90}, mid{225, 240, 250}, hi{240, 190, 40};
  auto out = header("P6", height, width);
  for (double v : pixels) {
    const double c = std::clamp(std::isfinite(v) ? v : -1.0, -1.0, 1.0);
    const auto& a = c < 0 ? lo : mid;
    const auto& b = c < 0 ? mid : hi;
    const double f = c < 0 ? c + 1.0 : c;
    for (int k = 0; k < 3; ++k)
      out.push_back(static_cast<char>(static_cast<std::uint8_t>(std::lround(a[k] + f * (b[k] - a[k])))));
  }
  return out;
}

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width) {
  analysis::write_text_file(path, encode_pgm(pixels, height, width));
}

void write_ppm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width) {
  analysis::write_text_file(path, encode_ppm(pixels, height, width));
}

}  // namespace rsr::cli
