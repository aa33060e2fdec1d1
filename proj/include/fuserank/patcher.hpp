#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fuserank/image_io.hpp"
#include "fuserank/tensor.hpp"

namespace fuserank {

enum class Label { covid, nofinding };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

}  // namespace fuserank

namespace fuserank::dataset {

struct Rect {
  std::size_t x = 0;
  std::size_t y = 0;
  std::size_t w = 0;
  std::size_t h = 0;
  bool operator==(const Rect&) const = default;
};

struct LabeledRegion {
  std::string image_id;
  Rect rect;
  Label label = Label::covid;
};

struct SourceImage {
  std::string image_id;
  GrayImage image;
};

struct Provenance {
  std::string image_id;
  std::size_t x = 0;
  std::size_t y = 0;
  bool operator==(const Provenance&) const = default;
};

struct Patch {
  std::size_t size = 0;
  std::vector<double> pixels;  // size x size, row-major
  Label label = Label::covid;
  Provenance provenance;
  bool operator==(const Patch&) const = default;
};

struct PatchSet {
  std::string subset_name;
  std::size_t patch_size = 0;
  std::vector<Patch> patches;
  std::uint64_t seed = 0;

  std::size_t count(Label label) const;
  bool operator==(const PatchSet&) const = default;
};

/// Samples count_per_class patches per label. Top-left corners are drawn
/// uniformly over every valid corner of every region carrying that label;
/// draws repeating an (image_id, x, y) triple are rejected. Covid patches are
/// drawn first, then nofinding, from one SplitMix64 stream.
PatchSet extract_patches(std::span<const SourceImage> images, std::span<const LabeledRegion> regions,
                         std::size_t size, std::size_t count_per_class, std::uint64_t seed,
                         std::string subset_name = "subset");

PatchSet extract_patches(const SourceImage& image, std::span<const LabeledRegion> regions, std::size_t size,
                         std::size_t count_per_class, std::uint64_t seed, std::string subset_name = "subset");

/// Bilinear resize (half-pixel centres, edge clamp) to height x width, with
/// the gray plane replicated into every channel. channels must be 1 or 3.
nn::Tensor3D normalize_patch(const Patch& patch, std::size_t height, std::size_t width, std::size_t channels);

/// Row indices of each side of a split, ascending.
struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Stratified split over a label sequence. Per class (covid first) a
/// SplitMix64 stream seeded from the master stream drives a Fisher-Yates
/// shuffle; the first round(train_fraction * n) shuffled rows go to train.
SplitIndices split_indices(std::span<const Label> labels, double train_fraction, std::uint64_t seed);

std::pair<PatchSet, PatchSet> split_dataset(const PatchSet& ps, double train_fraction, std::uint64_t seed);

inline constexpr std::string_view kManifestName = "manifest.jsonl";

/// Writes one 8-bit PGM per patch (<label>_<index>.pgm) plus manifest.jsonl.
/// A non-empty config_hash is recorded as an extra header key.
void write_manifest(const PatchSet& ps, const std::filesystem::path& dir, const std::string& config_hash = {});
PatchSet read_manifest(const std::filesystem::path& dir, std::string* config_hash = nullptr);

/// Regions file: JSON array of {image, x, y, w, h, label}.
std::vector<LabeledRegion> read_regions(const std::filesystem::path& path);

}  // namespace fuserank::dataset
