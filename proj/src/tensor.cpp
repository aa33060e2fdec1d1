#include "fuserank/tensor.hpp"

#include <cmath>
#include <string>

#include "fuserank/error.hpp"

namespace fuserank::nn {

namespace {

void check_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) fail(ErrorKind::invalid_argument, "tensor value is not finite");
  }
}

void check_dims(std::size_t h, std::size_t w, std::size_t c = 1) {
  if (h == 0 || w == 0 || c == 0) fail(ErrorKind::invalid_argument, "tensor dimensions must be >= 1");
}

}  // namespace

Tensor2D::Tensor2D(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), values_(height * width, fill) {
  check_dims(height, width);
}

Tensor2D::Tensor2D(std::size_t height, std::size_t width, std::vector<double> values)
    : height_(height), width_(width), values_(std::move(values)) {
  check_dims(height, width);
  if (values_.size() != height * width) {
    fail(ErrorKind::invalid_argument, "Tensor2D: expected " + std::to_string(height * width) +
                                          " values, got " + std::to_string(values_.size()));
  }
  check_finite(values_);
}

Tensor2D Tensor2D::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty() || rows.front().empty()) fail(ErrorKind::invalid_argument, "Tensor2D: empty rows");
  std::vector<double> flat;
  flat.reserve(rows.size() * rows.front().size());
  for (const auto& row : rows) {
    if (row.size() != rows.front().size()) fail(ErrorKind::invalid_argument, "Tensor2D: ragged rows");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return Tensor2D(rows.size(), rows.front().size(), std::move(flat));
}

Tensor3D::Tensor3D(std::size_t height, std::size_t width, std::size_t channels, double fill)
    : height_(height), width_(width), channels_(channels), values_(height * width * channels, fill) {
  check_dims(height, width, channels);
}

Tensor3D::Tensor3D(std::size_t height, std::size_t width, std::size_t channels, std::vector<double> values)
    : height_(height), width_(width), channels_(channels), values_(std::move(values)) {
  check_dims(height, width, channels);
  if (values_.size() != height * width * channels) {
    fail(ErrorKind::invalid_argument, "Tensor3D: expected " + std::to_string(height * width * channels) +
                                          " values, got " + std::to_string(values_.size()));
  }
  check_finite(values_);
}

Tensor2D Tensor3D::channel(std::size_t ch) const {
  Tensor2D plane(height_, width_);
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c) plane(r, c) = (*this)(r, c, ch);
  return plane;
}

void Tensor3D::set_channel(std::size_t ch, const Tensor2D& plane) {
  if (plane.height() != height_ || plane.width() != width_)
    fail(ErrorKind::invalid_argument, "set_channel: plane shape mismatch");
  for (std::size_t r = 0; r < height_; ++r)
    for (std::size_t c = 0; c < width_; ++c) (*this)(r, c, ch) = plane(r, c);
}

}  // namespace fuserank::nn
