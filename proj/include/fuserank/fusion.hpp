#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fuserank/patcher.hpp"
#include "fuserank/runtime.hpp"

namespace fuserank::fusion {

/// Samples x features, row-major, with one label per row.
struct FeatureMatrix {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> values;
  std::vector<Label> labels;

  std::span<const double> row(std::size_t r) const { return {values.data() + r * dim, dim}; }
  double at(std::size_t r, std::size_t c) const { return values[r * dim + c]; }

  /// Throws invalid-argument unless sizes agree and all values are finite.
  void validate() const;
  FeatureMatrix select_rows(std::span<const std::size_t> indices) const;

  bool operator==(const FeatureMatrix&) const = default;
};

struct RankedSelection {
  std::vector<std::size_t> order;
  std::vector<double> t_values;  // indexed by original feature index

  bool operator==(const RankedSelection&) const = default;
};

enum class FusionLength {
  strict,   ///< every input must have exactly kFeatureDim entries
  relaxed,  ///< any non-empty length (tests and small experiments)
};

/// [v1 | v2 | v3] in the fixed backbone order (VGG-16, GoogleNet, ResNet-50).
std::vector<double> fuse_features(std::span<const double> v1, std::span<const double> v2,
                                  std::span<const double> v3, FusionLength mode = FusionLength::strict);
std::vector<double> fuse_features(const backbone::FeatureVector& v1, const backbone::FeatureVector& v2,
                                  const backbone::FeatureVector& v3);

inline constexpr double kTScoreEpsilon = 1e-12;

/// Welch statistic (m1 - m2) / sqrt(s1^2/n1 + s2^2/n2 + eps) with sample
/// variances. Each class needs at least 2 values.
double t_score(std::span<const double> class1, std::span<const double> class2);

/// Per-column t-score of covid rows against nofinding rows; order sorts by
/// descending |t|, ties by ascending index.
RankedSelection rank_features(const FeatureMatrix& m);

/// Columns order[0..k) in ranking order; labels carried over.
FeatureMatrix select_top_k(const FeatureMatrix& m, const RankedSelection& r, std::size_t k);

void write_selection(const std::filesystem::path& path, const RankedSelection& r, const std::string& config_hash = {});
RankedSelection read_selection(const std::filesystem::path& path, std::string* config_hash = nullptr);

// Feature store ("FRFT0001"): magic, u32 LE header length, UTF-8 JSON header
// {rows, dim, backbone_order, labels: [0|1]} then rows x dim LE binary32.
// Label encoding: 1 = covid, 0 = nofinding.

inline constexpr std::string_view kStoreMagic = "FRFT0001";

struct FeatureStore {
  FeatureMatrix matrix;
  std::vector<std::string> backbone_order;
  std::string config_hash;  // optional extra header key; empty when absent
};

std::vector<std::uint8_t> encode_store(const FeatureStore& store);
FeatureStore decode_store(std::span<const std::uint8_t> bytes);
void write_store(const std::filesystem::path& path, const FeatureStore& store);
FeatureStore read_store(const std::filesystem::path& path);

}  // namespace fuserank::fusion
