// SPDX-License-Identifier: Apache-2.0
//
// Netpbm writers for values in [-1, 1] (clamped, mapped to 0..255).

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>

namespace rsr::cli {

std::uint8_t to_byte(double v);

/// Binary P5.
std::string encode_pgm(std::span<const double> pixels, std::size_t height, std::size_t width);
/// Binary P6 with a hole-ice-goal colour ramp.
std::string encode_ppm(std::span<const double> pixels, std::size_t height, std::size_t width);

void write_pgm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width);
void write_ppm(const std::filesystem::path& path, std::span<const double> pixels, std::size_t height,
               std::size_t width);

}  // namespace rsr::cli
