#include "fuserank/patcher.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <tuple>

#include <json.hpp>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"
#include "fuserank/prng.hpp"

namespace fuserank {

std::string_view to_string(Label label) { return label == Label::covid ? "covid" : "nofinding"; }

std::optional<Label> parse_label(std::string_view text) {
  if (text == "covid") return Label::covid;
  if (text == "nofinding") return Label::nofinding;
  return std::nullopt;
}

}  // namespace fuserank

namespace fuserank::dataset {

using nlohmann::json;

namespace {

constexpr Label kLabels[] = {Label::covid, Label::nofinding};

struct Candidate {
  const LabeledRegion* region;
  const GrayImage* image;
  std::size_t corners_x;
  std::size_t corners;
};

}  // namespace

std::size_t PatchSet::count(Label label) const {
  return static_cast<std::size_t>(
      std::count_if(patches.begin(), patches.end(), [&](const Patch& p) { return p.label == label; }));
}

PatchSet extract_patches(std::span<const SourceImage> images, std::span<const LabeledRegion> regions,
                         std::size_t size, std::size_t count_per_class, std::uint64_t seed,
                         std::string subset_name) {
  if (size == 0) fail(ErrorKind::invalid_argument, "patch size must be >= 1");
  if (count_per_class == 0) fail(ErrorKind::invalid_argument, "count_per_class must be >= 1");

  std::map<std::string, const GrayImage*> by_id;
  for (const auto& src : images) by_id.emplace(src.image_id, &src.image);

  for (const auto& r : regions) {
    auto it = by_id.find(r.image_id);
    if (it == by_id.end()) fail(ErrorKind::invalid_argument, "region references unknown image '" + r.image_id + "'");
    if (r.rect.w < size || r.rect.h < size)
      fail(ErrorKind::invalid_argument, "region " + std::to_string(r.rect.w) + "x" + std::to_string(r.rect.h) +
                                            " in '" + r.image_id + "' is smaller than patch size " +
                                            std::to_string(size));
    if (r.rect.x + r.rect.w > it->second->width || r.rect.y + r.rect.h > it->second->height)
      fail(ErrorKind::invalid_argument, "region lies outside image '" + r.image_id + "'");
  }

  PatchSet ps;
  ps.subset_name = std::move(subset_name);
  ps.patch_size = size;
  ps.seed = seed;
  ps.patches.reserve(2 * count_per_class);

  SplitMix64 rng(seed);
  std::set<std::tuple<std::string, std::size_t, std::size_t>> taken;

  for (Label label : kLabels) {
    std::vector<Candidate> candidates;
    std::vector<std::size_t> cumulative;
    std::size_t total = 0;
    for (const auto& r : regions) {
      if (r.label != label) continue;
      const std::size_t cx = r.rect.w - size + 1;
      const std::size_t cy = r.rect.h - size + 1;
      candidates.push_back({&r, by_id.at(r.image_id), cx, cx * cy});
      total += cx * cy;
      cumulative.push_back(total);
    }
    if (candidates.empty())
      fail(ErrorKind::invalid_argument, "no region labelled '" + std::string(to_string(label)) + "'");
    if (total < count_per_class)
      fail(ErrorKind::invalid_argument, "regions labelled '" + std::string(to_string(label)) + "' offer only " +
                                            std::to_string(total) + " distinct patch positions");

    std::size_t drawn = 0;
    std::size_t attempts = 0;
    const std::size_t max_attempts = 64 * count_per_class + 4096;
    while (drawn < count_per_class) {
      if (++attempts > max_attempts)
        fail(ErrorKind::invalid_argument, "could not draw enough distinct '" + std::string(to_string(label)) +
                                              "' patches (overlapping regions?)");
      const std::size_t u = rng.uniform(total);
      const std::size_t k = static_cast<std::size_t>(
          std::upper_bound(cumulative.begin(), cumulative.end(), u) - cumulative.begin());
      const Candidate& cand = candidates[k];
      const std::size_t local = u - (k == 0 ? 0 : cumulative[k - 1]);
      const std::size_t x = cand.region->rect.x + local % cand.corners_x;
      const std::size_t y = cand.region->rect.y + local / cand.corners_x;
      if (!taken.emplace(cand.region->image_id, x, y).second) continue;

      Patch p;
      p.size = size;
      p.label = label;
      p.provenance = {cand.region->image_id, x, y};
      p.pixels.resize(size * size);
      for (std::size_t r = 0; r < size; ++r)
        for (std::size_t c = 0; c < size; ++c) p.pixels[r * size + c] = cand.image->at(y + r, x + c);
      ps.patches.push_back(std::move(p));
      ++drawn;
    }
  }
  return ps;
}

PatchSet extract_patches(const SourceImage& image, std::span<const LabeledRegion> regions, std::size_t size,
                         std::size_t count_per_class, std::uint64_t seed, std::string subset_name) {
  return extract_patches(std::span(&image, 1), regions, size, count_per_class, seed, std::move(subset_name));
}

nn::Tensor3D normalize_patch(const Patch& patch, std::size_t height, std::size_t width, std::size_t channels) {
  if (channels != 1 && channels != 3) fail(ErrorKind::invalid_argument, "normalize_patch: channels must be 1 or 3");
  const std::size_t n = patch.size;
  if (n == 0 || patch.pixels.size() != n * n) fail(ErrorKind::invalid_argument, "normalize_patch: malformed patch");

  const double sy = static_cast<double>(n) / static_cast<double>(height);
  const double sx = static_cast<double>(n) / static_cast<double>(width);
  const double last = static_cast<double>(n - 1);
  nn::Tensor3D out(height, width, channels);
  for (std::size_t r = 0; r < height; ++r) {
    const double fy = std::clamp((static_cast<double>(r) + 0.5) * sy - 0.5, 0.0, last);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, n - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < width; ++c) {
      const double fx = std::clamp((static_cast<double>(c) + 0.5) * sx - 0.5, 0.0, last);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, n - 1);
      const double wx = fx - static_cast<double>(x0);
      const auto px = [&](std::size_t yy, std::size_t xx) { return patch.pixels[yy * n + xx]; };
      const double top = px(y0, x0) + (px(y0, x1) - px(y0, x0)) * wx;
      const double bottom = px(y1, x0) + (px(y1, x1) - px(y1, x0)) * wx;
      const double v = std::clamp(top + (bottom - top) * wy, 0.0, 1.0);
      for (std::size_t ch = 0; ch < channels; ++ch) out(r, c, ch) = v;
    }
  }
  return out;
}

SplitIndices split_indices(std::span<const Label> labels, double train_fraction, std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    fail(ErrorKind::invalid_argument, "train_fraction must lie in (0, 1)");
  SplitMix64 master(seed);
  SplitIndices out;
  for (Label label : kLabels) {
    std::vector<std::size_t> rows;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == label) rows.push_back(i);
    if (rows.size() < 2)
      fail(ErrorKind::invalid_argument, "class '" + std::string(to_string(label)) + "' has fewer than 2 samples");

    SplitMix64 rng(master.next());
    for (std::size_t i = rows.size() - 1; i > 0; --i) std::swap(rows[i], rows[rng.uniform(i + 1)]);
    const auto cut = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(rows.size())));
    out.train.insert(out.train.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(cut));
    out.test.insert(out.test.end(), rows.begin() + static_cast<std::ptrdiff_t>(cut), rows.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

std::pair<PatchSet, PatchSet> split_dataset(const PatchSet& ps, double train_fraction, std::uint64_t seed) {
  std::vector<Label> labels;
  labels.reserve(ps.patches.size());
  for (const auto& p : ps.patches) labels.push_back(p.label);
  const SplitIndices idx = split_indices(labels, train_fraction, seed);

  PatchSet train{ps.subset_name, ps.patch_size, {}, ps.seed};
  PatchSet test{ps.subset_name, ps.patch_size, {}, ps.seed};
  for (std::size_t i : idx.train) train.patches.push_back(ps.patches[i]);
  for (std::size_t i : idx.test) test.patches.push_back(ps.patches[i]);
  return {std::move(train), std::move(test)};
}

void write_manifest(const PatchSet& ps, const std::filesystem::path& dir, const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  std::ostringstream out;
  json header{{"subset_name", ps.subset_name},
              {"patch_size", ps.patch_size},
              {"seed", ps.seed},
              {"counts", {{"covid", ps.count(Label::covid)}, {"nofinding", ps.count(Label::nofinding)}}}};
  if (!config_hash.empty()) header["config_hash"] = config_hash;
  out << header.dump() << '\n';

  std::map<Label, std::size_t> next_index;
  for (const auto& p : ps.patches) {
    if (p.size != ps.patch_size) fail(ErrorKind::invalid_argument, "patch size differs from PatchSet patch_size");
    const std::string file = std::string(to_string(p.label)) + "_" + std::to_string(next_index[p.label]++) + ".pgm";
    write_pgm(dir / file, GrayImage{p.size, p.size, p.pixels});
    json entry{{"file", file},
               {"label", to_string(p.label)},
               {"source_image", p.provenance.image_id},
               {"x", p.provenance.x},
               {"y", p.provenance.y},
               {"size", p.size}};
    out << entry.dump() << '\n';
  }
  io::write_file_atomic(dir / kManifestName, out.str());
}

PatchSet read_manifest(const std::filesystem::path& dir, std::string* config_hash) {
  const std::string text = io::read_text_file(dir / kManifestName);
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  PatchSet ps;
  bool have_header = false;
  const std::string where = (dir / kManifestName).string();

  auto bad = [&](const std::string& why) {
    fail(ErrorKind::format, where + ":" + std::to_string(line_no) + ": " + why);
  };

  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception&) {
      bad("malformed JSON");
    }
    try {
      if (!have_header) {
        ps.subset_name = j.at("subset_name").get<std::string>();
        ps.patch_size = j.at("patch_size").get<std::size_t>();
        ps.seed = j.at("seed").get<std::uint64_t>();
        if (config_hash) *config_hash = j.value("config_hash", std::string());
        have_header = true;
        continue;
      }
      Patch p;
      const auto label = parse_label(j.at("label").get<std::string>());
      if (!label) bad("unknown label");
      p.label = *label;
      p.size = j.at("size").get<std::size_t>();
      if (p.size != ps.patch_size) bad("patch size differs from header patch_size");
      p.provenance = {j.at("source_image").get<std::string>(), j.at("x").get<std::size_t>(),
                      j.at("y").get<std::size_t>()};
      const auto file = dir / j.at("file").get<std::string>();
      if (!std::filesystem::exists(file)) bad("missing patch file " + file.string());
      GrayImage img = read_pgm(file);
      if (img.width != p.size || img.height != p.size) bad("patch file dimensions differ from size");
      p.pixels = std::move(img.pixels);
      ps.patches.push_back(std::move(p));
    } catch (const json::exception& e) {
      bad(std::string("missing or mistyped field: ") + e.what());
    }
  }
  if (!have_header) fail(ErrorKind::format, where + ": missing header line");
  return ps;
}

std::vector<LabeledRegion> read_regions(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail(ErrorKind::io, "regions file not found: " + path.string());
  json j;
  try {
    j = json::parse(io::read_text_file(path));
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": " + e.what());
  }
  std::vector<LabeledRegion> regions;
  try {
    for (const auto& r : j) {
      const auto label = parse_label(r.at("label").get<std::string>());
      if (!label) fail(ErrorKind::format, path.string() + ": unknown label in region");
      regions.push_back({r.at("image").get<std::string>(),
                         {r.at("x").get<std::size_t>(), r.at("y").get<std::size_t>(), r.at("w").get<std::size_t>(),
                          r.at("h").get<std::size_t>()},
                         *label});
    }
  } catch (const json::exception& e) {
    fail(ErrorKind::format, path.string() + ": malformed region: " + e.what());
  }
  return regions;
}

}  // namespace fuserank::dataset
