#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace fuserank::nn {

/// Row-major 2-D grid of reals.
class Tensor2D {
 public:
  Tensor2D() = default;
  Tensor2D(std::size_t height, std::size_t width, double fill = 0.0);
  Tensor2D(std::size_t height, std::size_t width, std::vector<double> values);

  /// Builds from nested rows; all rows must have equal length.
  static Tensor2D from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(std::size_t row, std::size_t col) { return values_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return values_[row * width_ + col]; }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  bool operator==(const Tensor2D&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> values_;
};

/// Row-major, channel-last (H x W x C) grid of reals.
class Tensor3D {
 public:
  Tensor3D() = default;
  Tensor3D(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0);
  Tensor3D(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> values);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t size() const noexcept { return values_.size(); }

  double& operator()(std::size_t row, std::size_t col, std::size_t ch) {
    return values_[(row * width_ + col) * channels_ + ch];
  }
  double operator()(std::size_t row, std::size_t col, std::size_t ch) const {
    return values_[(row * width_ + col) * channels_ + ch];
  }

  std::span<const double> values() const noexcept { return values_; }
  std::span<double> values() noexcept { return values_; }

  /// Copies one channel out as a 2-D plane.
  Tensor2D channel(std::size_t ch) const;
  void set_channel(std::size_t ch, const Tensor2D& plane);

  bool operator==(const Tensor3D&) const = default;

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
};

}  // namespace fuserank::nn
