#pragma once

// Tensor primitives the backbone runtime is composed from. All functions are
// pure; arithmetic is carried out in binary64.

#include <cstddef>
#include <span>
#include <vector>

#include "fuserank/tensor.hpp"

namespace fuserank::nn {

/// How a non-integral (H + 2P - K) / S is treated.
enum class Rounding {
  exact,  ///< geometry-error unless (H + 2P - K) is divisible by S
  floor,  ///< trailing rows/cols that do not fill a whole stride are dropped
};

struct ConvGeometry {
  std::size_t kernel = 1;  ///< K, or the pooling window T
  std::size_t stride = 1;  ///< S
  std::size_t padding = 0; ///< P, applied symmetrically on all four sides
  Rounding rounding = Rounding::exact;
};

/// (H + 2P - K) / S + 1. Throws geometry-error on a negative or (in exact
/// mode) non-integral numerator, invalid-argument on K = 0 or S = 0.
std::size_t conv_output_size(std::size_t extent, std::size_t padding, std::size_t kernel,
                             std::size_t stride, Rounding rounding = Rounding::exact);

/// Full discrete convolution, output length |x| + |w| - 1.
std::vector<double> convolve1d(std::span<const double> x, std::span<const double> w);

Tensor2D zero_pad(const Tensor2D& input, std::size_t padding);
Tensor2D flip180(const Tensor2D& kernel);

/// S(i,j) = sum_m sum_n I(i*S + m, j*S + n) K(m,n) over the zero-padded input.
Tensor2D cross_correlate2d(const Tensor2D& input, const Tensor2D& kernel, const ConvGeometry& geom);

/// True convolution: cross-correlation with the kernel rotated by 180 degrees.
Tensor2D convolve2d(const Tensor2D& input, const Tensor2D& kernel, const ConvGeometry& geom);

enum class PoolMode { max, mean };

/// Window statistics over a T x T window (geom.kernel). Padded cells are
/// skipped by max pooling and count as zeros for mean pooling.
Tensor2D pool2d(const Tensor2D& input, const ConvGeometry& geom, PoolMode mode);

std::vector<double> relu(std::span<const double> values);
Tensor2D relu(const Tensor2D& t);
Tensor3D relu(const Tensor3D& t);

struct Standardizer {
  double mean = 0.0;
  double stdev = 1.0;
  bool degenerate = false;

  static constexpr double kEpsilon = 1e-12;

  /// Z = (X - mean) / stdev, or 0 when the fitted samples had no spread.
  double apply(double x) const noexcept { return degenerate ? 0.0 : (x - mean) / stdev; }

  bool operator==(const Standardizer&) const = default;
};

/// Fits mean and sample (n - 1) standard deviation. Needs at least 2 samples.
Standardizer standardize_fit(std::span<const double> samples);
double standardize_apply(const Standardizer& s, double x) noexcept;

/// Row-major weight matrix view: rows x cols.
struct MatrixView {
  std::span<const double> values;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// y = W x + bias.
std::vector<double> dense(std::span<const double> x, const MatrixView& weights,
                          std::span<const double> bias);

std::vector<double> softmax(std::span<const double> logits);

/// -f_y + log sum_j exp(f_j), evaluated with max subtraction.
double cross_entropy_loss(std::span<const double> logits, std::size_t true_class);

/// Multi-channel convolution: output channel o is the sum over input channels
/// of cross_correlate2d(input[c], weights[o, :, :, c]) plus bias[o]. Weights are
/// laid out [out_channels][K][K][in_channels].
Tensor3D conv2d_multi(const Tensor3D& input, std::span<const double> weights,
                      std::span<const double> bias, std::size_t out_channels,
                      const ConvGeometry& geom);

Tensor3D pool2d_multi(const Tensor3D& input, const ConvGeometry& geom, PoolMode mode);

/// Across-channel local response normalisation:
/// b_c = a_c / (k + alpha / n * sum_{c' in window(c)} a_{c'}^2)^beta, with the
/// window spanning channels [c - n/2, c + (n-1)/2] clipped to the valid range.
struct LrnParams {
  std::size_t size = 5;
  double alpha = 1e-4;
  double beta = 0.75;
  double k = 1.0;
};
Tensor3D local_response_norm(const Tensor3D& input, const LrnParams& params);

}  // namespace fuserank::nn
