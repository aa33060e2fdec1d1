#include "fuserank/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"

namespace fuserank::fusion {

using nlohmann::json;

void FeatureMatrix::validate() const {
  if (values.size() != rows * dim)
    fail(ErrorKind::invalid_argument, "feature matrix holds " + std::to_string(values.size()) + " values, expected " +
                                          std::to_string(rows * dim));
  if (labels.size() != rows) fail(ErrorKind::invalid_argument, "feature matrix label count differs from rows");
  for (double v : values)
    if (!std::isfinite(v)) fail(ErrorKind::invalid_argument, "feature matrix contains a non-finite value");
}

FeatureMatrix FeatureMatrix::select_rows(std::span<const std::size_t> indices) const {
  FeatureMatrix out;
  out.rows = indices.size();
  out.dim = dim;
  out.values.reserve(indices.size() * dim);
  for (std::size_t i : indices) {
    if (i >= rows) fail(ErrorKind::invalid_argument, "row index out of range");
    const auto r = row(i);
    out.values.insert(out.values.end(), r.begin(), r.end());
    out.labels.push_back(labels[i]);
  }
  return out;
}

std::vector<double> fuse_features(std::span<const double> v1, std::span<const double> v2,
                                  std::span<const double> v3, FusionLength mode) {
  for (auto v : {v1, v2, v3}) {
    if (mode == FusionLength::strict && v.size() != backbone::kFeatureDim)
      fail(ErrorKind::invalid_argument, "fuse_features: expected " + std::to_string(backbone::kFeatureDim) +
                                            "-d input, got " + std::to_string(v.size()));
    if (v.empty()) fail(ErrorKind::invalid_argument, "fuse_features: empty input");
  }
  std::vector<double> out;
  out.reserve(v1.size() + v2.size() + v3.size());
  out.insert(out.end(), v1.begin(), v1.end());
  out.insert(out.end(), v2.begin(), v2.end());
  out.insert(out.end(), v3.begin(), v3.end());
  return out;
}

std::vector<double> fuse_features(const backbone::FeatureVector& v1, const backbone::FeatureVector& v2,
                                  const backbone::FeatureVector& v3) {
  return fuse_features(v1.values, v2.values, v3.values, FusionLength::strict);
}

namespace {

struct Moments {
  double mean;
  double variance;  // sample, n - 1
};

Moments moments(std::span<const double> v) {
  const auto n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return {mean, ss / (n - 1.0)};
}

}  // namespace

double t_score(std::span<const double> class1, std::span<const double> class2) {
  if (class1.size() < 2 || class2.size() < 2)
    fail(ErrorKind::invalid_argument, "t_score: each class needs at least 2 samples");
  const Moments a = moments(class1);
  const Moments b = moments(class2);
  const double se2 = a.variance / static_cast<double>(class1.size()) + b.variance / static_cast<double>(class2.size());
  return (a.mean - b.mean) / std::sqrt(se2 + kTScoreEpsilon);
}

RankedSelection rank_features(const FeatureMatrix& m) {
  m.validate();
  std::vector<std::size_t> pos_rows, neg_rows;
  for (std::size_t r = 0; r < m.rows; ++r) (m.labels[r] == Label::covid ? pos_rows : neg_rows).push_back(r);
  if (pos_rows.size() < 2 || neg_rows.size() < 2)
    fail(ErrorKind::invalid_argument, "rank_features: both classes need at least 2 rows");

  RankedSelection out;
  out.t_values.resize(m.dim);
  std::vector<double> a(pos_rows.size()), b(neg_rows.size());
  for (std::size_t c = 0; c < m.dim; ++c) {
    for (std::size_t i = 0; i < pos_rows.size(); ++i) a[i] = m.at(pos_rows[i], c);
    for (std::size_t i = 0; i < neg_rows.size(); ++i) b[i] = m.at(neg_rows[i], c);
    out.t_values[c] = t_score(a, b);
  }
  out.order.resize(m.dim);
  std::iota(out.order.begin(), out.order.end(), std::size_t{0});
  std::stable_sort(out.order.begin(), out.order.end(), [&](std::size_t x, std::size_t y) {
    return std::abs(out.t_values[x]) > std::abs(out.t_values[y]);
  });
  return out;
}

FeatureMatrix select_top_k(const FeatureMatrix& m, const RankedSelection& r, std::size_t k) {
  if (k < 1 || k > m.dim)
    fail(ErrorKind::invalid_argument, "select_top_k: k=" + std::to_string(k) + " outside [1, " + std::to_string(m.dim) + "]");
  if (r.order.size() != m.dim) fail(ErrorKind::invalid_argument, "select_top_k: ranking dimension differs from matrix");
  FeatureMatrix out;
  out.rows = m.rows;
  out.dim = k;
  out.labels = m.labels;
  out.values.resize(m.rows * k);
  for (std::size_t row = 0; row < m.rows; ++row)
    for (std::size_t j = 0; j < k; ++j) out.values[row * k + j] = m.at(row, r.order[j]);
  return out;
}

void write_selection(const std::filesystem::path& path, const RankedSelection& r, const std::string& config_hash) {
  json j{{"order", r.order}, {"t_values", r.t_values}};
  if (!config_hash.empty()) j["config_hash"] = config_hash;
  io::write_file_atomic(path, j.dump() + "\n");
}

RankedSelection read_selection(const std::filesystem::path& path, std::string* config_hash) {
  try {
    const json j = json::parse(io::read_text_file(path));
    RankedSelection r{j.at("order").get<std::vector<std::size_t>>(), j.at("t_values").get<std::vector<double>>()};
    if (r.order.size() != r.t_values.size()) fail(ErrorKind::format, path.string() + ": order/t_values length mismatch");
    std::vector<std::size_t> sorted = r.order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted[i] != i) fail(ErrorKind::format, path.string() + ": order is not a permutation");
    if (config_hash) *config_hash = j.value("config_hash", std::string());
    return r;
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
}

std::vector<std::uint8_t> encode_store(const FeatureStore& store) {
  const FeatureMatrix& m = store.matrix;
  if (m.values.size() != m.rows * m.dim || m.labels.size() != m.rows)
    fail(ErrorKind::invalid_argument, "encode_store: inconsistent feature matrix");
  std::vector<int> labels;
  labels.reserve(m.rows);
  for (Label l : m.labels) labels.push_back(l == Label::covid ? 1 : 0);
  json header{{"rows", m.rows}, {"dim", m.dim}, {"backbone_order", store.backbone_order}, {"labels", labels}};
  if (!store.config_hash.empty()) header["config_hash"] = store.config_hash;
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(kStoreMagic.begin(), kStoreMagic.end());
  io::append_u32_le(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  std::vector<float> narrow(m.values.begin(), m.values.end());
  io::append_f32_le_array(out, narrow);
  return out;
}

FeatureStore decode_store(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kStoreMagic.size() + 4 || std::memcmp(bytes.data(), kStoreMagic.data(), kStoreMagic.size()) != 0)
    fail(ErrorKind::format, "bad magic: not an FRFT0001 feature store");
  std::size_t pos = kStoreMagic.size();
  const std::uint32_t len = io::read_u32_le(bytes.subspan(pos, 4));
  pos += 4;
  if (bytes.size() - pos < len) fail(ErrorKind::format, "truncated feature store header");

  FeatureStore store;
  try {
    const json header = json::parse(std::string_view(reinterpret_cast<const char*>(bytes.data() + pos), len));
    store.matrix.rows = header.at("rows").get<std::size_t>();
    store.matrix.dim = header.at("dim").get<std::size_t>();
    store.backbone_order = header.at("backbone_order").get<std::vector<std::string>>();
    store.config_hash = header.value("config_hash", std::string());
    for (int l : header.at("labels").get<std::vector<int>>()) {
      if (l != 0 && l != 1) fail(ErrorKind::format, "feature store label must be 0 or 1");
      store.matrix.labels.push_back(l == 1 ? Label::covid : Label::nofinding);
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, std::string("malformed feature store header: ") + e.what());
  }
  pos += len;
  if (store.matrix.labels.size() != store.matrix.rows) fail(ErrorKind::format, "feature store label count differs from rows");
  const std::size_t count = store.matrix.rows * store.matrix.dim;
  if (bytes.size() - pos != count * 4)
    fail(ErrorKind::format, "feature store payload holds " + std::to_string(bytes.size() - pos) + " bytes, expected " +
                                std::to_string(count * 4));
  const std::vector<float> narrow = io::read_f32_le_array(bytes.subspan(pos));
  store.matrix.values.assign(narrow.begin(), narrow.end());
  for (double v : store.matrix.values)
    if (!std::isfinite(v)) fail(ErrorKind::format, "feature store contains a non-finite value");
  return store;
}

void write_store(const std::filesystem::path& path, const FeatureStore& store) {
  io::write_file_atomic(path, encode_store(store));
}

FeatureStore read_store(const std::filesystem::path& path) {
  const auto bytes = io::read_file_bytes(path);
  try {
    return decode_store(bytes);
  } catch (const Error& e) {
    fail(e.kind(), path.string() + ": " + e.what());
  }
}

}  // namespace fuserank::fusion
