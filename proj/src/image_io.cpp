#include "fuserank/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

#include "fuserank/error.hpp"
#include "fuserank/io_util.hpp"

namespace fuserank::dataset {

namespace {

class PgmReader {
 public:
  PgmReader(const std::vector<std::uint8_t>& bytes, std::string name) : bytes_(bytes), name_(std::move(name)) {}

  std::size_t number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_])) fail(ErrorKind::format, name_ + ": malformed PGM header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) v = v * 10 + (bytes_[pos_++] - '0');
    return v;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  const std::vector<std::uint8_t>& bytes_;
  std::string name_;
  std::size_t pos_ = 2;
};

}  // namespace

std::uint8_t quantize8(double value) noexcept {
  return static_cast<std::uint8_t>(std::lround(std::clamp(value, 0.0, 1.0) * 255.0));
}

GrayImage read_pgm(const std::filesystem::path& path) {
  const std::vector<std::uint8_t> bytes = io::read_file_bytes(path);
  const std::string name = path.string();
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '2'))
    fail(ErrorKind::format, name + ": not a P2/P5 PGM file");
  const bool binary = bytes[1] == '5';

  PgmReader reader(bytes, name);
  GrayImage img;
  img.width = reader.number();
  img.height = reader.number();
  const std::size_t maxval = reader.number();
  if (img.width == 0 || img.height == 0 || maxval == 0 || maxval > 65535)
    fail(ErrorKind::format, name + ": invalid PGM dimensions or maxval");

  const std::size_t count = img.width * img.height;
  img.pixels.resize(count);
  const auto scale = static_cast<double>(maxval);
  if (binary) {
    std::size_t pos = reader.pos() + 1;  // single whitespace after maxval
    const std::size_t bpp = maxval < 256 ? 1 : 2;
    if (bytes.size() < pos + count * bpp) fail(ErrorKind::format, name + ": truncated PGM raster");
    for (std::size_t i = 0; i < count; ++i) {
      std::size_t v = bytes[pos + i * bpp];
      if (bpp == 2) v = (v << 8) | bytes[pos + i * bpp + 1];
      if (v > maxval) fail(ErrorKind::format, name + ": pixel exceeds maxval");
      img.pixels[i] = static_cast<double>(v) / scale;
    }
  } else {
    for (std::size_t i = 0; i < count; ++i) {
      const std::size_t v = reader.number();
      if (v > maxval) fail(ErrorKind::format, name + ": pixel exceeds maxval");
      img.pixels[i] = static_cast<double>(v) / scale;
    }
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const GrayImage& image) {
  if (image.pixels.size() != image.width * image.height)
    fail(ErrorKind::invalid_argument, "write_pgm: pixel count does not match dimensions");
  const std::string header = "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> bytes(header.begin(), header.end());
  bytes.reserve(bytes.size() + image.pixels.size());
  for (double v : image.pixels) bytes.push_back(quantize8(v));
  io::write_file_atomic(path, bytes);
}

}  // namespace fuserank::dataset
