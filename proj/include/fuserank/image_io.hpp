#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace fuserank::dataset {

/// Grayscale intensities normalised to [0, 1], row-major.
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  double at(std::size_t row, std::size_t col) const { return pixels[row * width + col]; }
  bool operator==(const GrayImage&) const = default;
};

/// Reads binary (P5) or ASCII (P2) PGM. Intensities are divided by the file's
/// maxval, so 8- and 16-bit sources land on the same [0, 1] scale.
GrayImage read_pgm(const std::filesystem::path& path);

/// Writes an 8-bit binary PGM; values are clamped to [0, 1] and rounded to
/// the nearest of 256 levels.
void write_pgm(const std::filesystem::path& path, const GrayImage& image);

std::uint8_t quantize8(double value) noexcept;

}  // namespace fuserank::dataset
