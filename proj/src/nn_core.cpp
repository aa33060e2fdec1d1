#include "fuserank/nn_core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "fuserank/error.hpp"

namespace fuserank::nn {

std::size_t conv_output_size(std::size_t extent, std::size_t padding, std::size_t kernel,
                             std::size_t stride, Rounding rounding) {
  if (kernel == 0 || stride == 0 || extent == 0)
    fail(ErrorKind::invalid_argument, "conv_output_size: H, K and S must be >= 1");
  const std::size_t padded = extent + 2 * padding;
  if (padded < kernel) {
    fail(ErrorKind::geometry, "kernel " + std::to_string(kernel) + " exceeds padded extent " +
                                  std::to_string(padded));
  }
  const std::size_t span = padded - kernel;
  if (rounding == Rounding::exact && span % stride != 0) {
    fail(ErrorKind::geometry, "(H + 2P - K) = " + std::to_string(span) +
                                  " is not divisible by stride " + std::to_string(stride));
  }
  return span / stride + 1;
}

std::vector<double> convolve1d(std::span<const double> x, std::span<const double> w) {
  if (x.empty() || w.empty()) fail(ErrorKind::invalid_argument, "convolve1d: empty input");
  std::vector<double> out(x.size() + w.size() - 1, 0.0);
  for (std::size_t a = 0; a < x.size(); ++a)
    for (std::size_t b = 0; b < w.size(); ++b) out[a + b] += x[a] * w[b];
  return out;
}

Tensor2D zero_pad(const Tensor2D& input, std::size_t padding) {
  if (padding == 0) return input;
  Tensor2D out(input.height() + 2 * padding, input.width() + 2 * padding);
  for (std::size_t r = 0; r < input.height(); ++r)
    for (std::size_t c = 0; c < input.width(); ++c) out(r + padding, c + padding) = input(r, c);
  return out;
}

Tensor2D flip180(const Tensor2D& kernel) {
  Tensor2D out(kernel.height(), kernel.width());
  for (std::size_t r = 0; r < kernel.height(); ++r)
    for (std::size_t c = 0; c < kernel.width(); ++c)
      out(kernel.height() - 1 - r, kernel.width() - 1 - c) = kernel(r, c);
  return out;
}

Tensor2D cross_correlate2d(const Tensor2D& input, const Tensor2D& kernel, const ConvGeometry& geom) {
  if (input.size() == 0 || kernel.size() == 0) fail(ErrorKind::invalid_argument, "cross_correlate2d: empty tensor");
  const std::size_t padded_h = input.height() + 2 * geom.padding;
  const std::size_t padded_w = input.width() + 2 * geom.padding;
  if (kernel.height() > padded_h || kernel.width() > padded_w)
    fail(ErrorKind::invalid_argument, "cross_correlate2d: kernel larger than padded input");

  const std::size_t out_h = conv_output_size(input.height(), geom.padding, kernel.height(), geom.stride, geom.rounding);
  const std::size_t out_w = conv_output_size(input.width(), geom.padding, kernel.width(), geom.stride, geom.rounding);
  const Tensor2D padded = zero_pad(input, geom.padding);

  Tensor2D out(out_h, out_w);
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      double acc = 0.0;
      for (std::size_t m = 0; m < kernel.height(); ++m)
        for (std::size_t n = 0; n < kernel.width(); ++n)
          acc += padded(i * geom.stride + m, j * geom.stride + n) * kernel(m, n);
      out(i, j) = acc;
    }
  }
  return out;
}

Tensor2D convolve2d(const Tensor2D& input, const Tensor2D& kernel, const ConvGeometry& geom) {
  return cross_correlate2d(input, flip180(kernel), geom);
}

Tensor2D pool2d(const Tensor2D& input, const ConvGeometry& geom, PoolMode mode) {
  const std::size_t window = geom.kernel;
  if (window == 0) fail(ErrorKind::invalid_argument, "pool2d: window must be >= 1");
  if (window > input.height() + 2 * geom.padding || window > input.width() + 2 * geom.padding)
    fail(ErrorKind::invalid_argument, "pool2d: window larger than padded input");
  const std::size_t out_h = conv_output_size(input.height(), geom.padding, window, geom.stride, geom.rounding);
  const std::size_t out_w = conv_output_size(input.width(), geom.padding, window, geom.stride, geom.rounding);

  Tensor2D out(out_h, out_w);
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      double best = -std::numeric_limits<double>::infinity();
      double sum = 0.0;
      for (std::size_t m = 0; m < window; ++m) {
        for (std::size_t n = 0; n < window; ++n) {
          const auto r = static_cast<std::ptrdiff_t>(i * geom.stride + m) - pad;
          const auto c = static_cast<std::ptrdiff_t>(j * geom.stride + n) - pad;
          if (r < 0 || c < 0 || r >= h || c >= w) continue;
          const double v = input(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
          best = std::max(best, v);
          sum += v;
        }
      }
      out(i, j) = mode == PoolMode::max ? best : sum / static_cast<double>(window * window);
    }
  }
  return out;
}

std::vector<double> relu(std::span<const double> values) {
  std::vector<double> out(values.begin(), values.end());
  for (double& v : out) v = std::max(v, 0.0);
  return out;
}

Tensor2D relu(const Tensor2D& t) {
  Tensor2D out = t;
  for (double& v : out.values()) v = std::max(v, 0.0);
  return out;
}

Tensor3D relu(const Tensor3D& t) {
  Tensor3D out = t;
  for (double& v : out.values()) v = std::max(v, 0.0);
  return out;
}

Standardizer standardize_fit(std::span<const double> samples) {
  if (samples.size() < 2) fail(ErrorKind::invalid_argument, "standardize_fit: need at least 2 samples");
  const auto n = static_cast<double>(samples.size());
  double mean = 0.0;
  for (double v : samples) mean += v;
  mean /= n;
  double ss = 0.0;
  for (double v : samples) ss += (v - mean) * (v - mean);
  const double stdev = std::sqrt(ss / (n - 1.0));
  return Standardizer{mean, stdev, stdev < Standardizer::kEpsilon};
}

double standardize_apply(const Standardizer& s, double x) noexcept { return s.apply(x); }

std::vector<double> dense(std::span<const double> x, const MatrixView& weights,
                          std::span<const double> bias) {
  if (weights.values.size() != weights.rows * weights.cols)
    fail(ErrorKind::invalid_argument, "dense: weight view size does not match rows x cols");
  if (x.size() != weights.cols || bias.size() != weights.rows) {
    fail(ErrorKind::invalid_argument, "dense: dimension mismatch (x=" + std::to_string(x.size()) +
                                          ", W=" + std::to_string(weights.rows) + "x" +
                                          std::to_string(weights.cols) + ", b=" + std::to_string(bias.size()) + ")");
  }
  std::vector<double> y(weights.rows);
  for (std::size_t r = 0; r < weights.rows; ++r) {
    const double* row = weights.values.data() + r * weights.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < weights.cols; ++c) acc += row[c] * x[c];
    y[r] = acc + bias[r];
  }
  return y;
}

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) fail(ErrorKind::invalid_argument, "softmax: empty logits");
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

double cross_entropy_loss(std::span<const double> logits, std::size_t true_class) {
  if (true_class >= logits.size())
    fail(ErrorKind::invalid_argument, "cross_entropy_loss: class index out of range");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double f : logits) total += std::exp(f - peak);
  return -logits[true_class] + peak + std::log(total);
}

Tensor3D conv2d_multi(const Tensor3D& input, std::span<const double> weights,
                      std::span<const double> bias, std::size_t out_channels,
                      const ConvGeometry& geom) {
  const std::size_t k = geom.kernel;
  const std::size_t in_c = input.channels();
  if (weights.size() != out_channels * k * k * in_c || bias.size() != out_channels)
    fail(ErrorKind::invalid_argument, "conv2d: weight/bias size does not match geometry");
  if (k > input.height() + 2 * geom.padding || k > input.width() + 2 * geom.padding)
    fail(ErrorKind::invalid_argument, "conv2d: kernel larger than padded input");
  const std::size_t out_h = conv_output_size(input.height(), geom.padding, k, geom.stride, geom.rounding);
  const std::size_t out_w = conv_output_size(input.width(), geom.padding, k, geom.stride, geom.rounding);

  Tensor3D out(out_h, out_w, out_channels);
  const auto pad = static_cast<std::ptrdiff_t>(geom.padding);
  const auto h = static_cast<std::ptrdiff_t>(input.height());
  const auto w = static_cast<std::ptrdiff_t>(input.width());
  const double* in = input.values().data();
  double* dst = out.values().data();

  for (std::size_t i = 0; i < out_h; ++i) {
    for (std::size_t j = 0; j < out_w; ++j) {
      double* cell = dst + (i * out_w + j) * out_channels;
      for (std::size_t o = 0; o < out_channels; ++o) cell[o] = bias[o];
      for (std::size_t m = 0; m < k; ++m) {
        const auto r = static_cast<std::ptrdiff_t>(i * geom.stride + m) - pad;
        if (r < 0 || r >= h) continue;
        for (std::size_t n = 0; n < k; ++n) {
          const auto c = static_cast<std::ptrdiff_t>(j * geom.stride + n) - pad;
          if (c < 0 || c >= w) continue;
          const double* px = in + (static_cast<std::size_t>(r) * input.width() + static_cast<std::size_t>(c)) * in_c;
          for (std::size_t o = 0; o < out_channels; ++o) {
            const double* kw = weights.data() + ((o * k + m) * k + n) * in_c;
            double acc = 0.0;
            for (std::size_t ch = 0; ch < in_c; ++ch) acc += px[ch] * kw[ch];
            cell[o] += acc;
          }
        }
      }
    }
  }
  return out;
}

Tensor3D pool2d_multi(const Tensor3D& input, const ConvGeometry& geom, PoolMode mode) {
  Tensor3D out;
  for (std::size_t ch = 0; ch < input.channels(); ++ch) {
    const Tensor2D plane = pool2d(input.channel(ch), geom, mode);
    if (ch == 0) out = Tensor3D(plane.height(), plane.width(), input.channels());
    out.set_channel(ch, plane);
  }
  return out;
}

Tensor3D local_response_norm(const Tensor3D& input, const LrnParams& params) {
  if (params.size == 0) fail(ErrorKind::invalid_argument, "lrn: size must be >= 1");
  Tensor3D out(input.height(), input.width(), input.channels());
  const std::size_t channels = input.channels();
  const std::size_t before = params.size / 2;
  const std::size_t after = (params.size - 1) / 2;
  for (std::size_t r = 0; r < input.height(); ++r) {
    for (std::size_t c = 0; c < input.width(); ++c) {
      for (std::size_t ch = 0; ch < channels; ++ch) {
        const std::size_t lo = ch >= before ? ch - before : 0;
        const std::size_t hi = std::min(channels - 1, ch + after);
        double sq = 0.0;
        for (std::size_t q = lo; q <= hi; ++q) sq += input(r, c, q) * input(r, c, q);
        const double scale = params.k + params.alpha / static_cast<double>(params.size) * sq;
        out(r, c, ch) = input(r, c, ch) / std::pow(scale, params.beta);
      }
    }
  }
  return out;
}

}  // namespace fuserank::nn
