#pragma once

// RGB8 images and the two on-disk encodings the pipeline accepts:
// binary PPM (P6, maxval 255) and PNG (via libpng's simplified API).

#include <cctype>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include <png.h>

#include "spsmvg/errors.hpp"

namespace spsmvg {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb &, const Rgb &) = default;
};

struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<Rgb> pixels; // row-major

  Image() = default;
  Image(std::size_t w, std::size_t h, Rgb fill = {}) : width(w), height(h), pixels(w * h, fill) {}

  Rgb &at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  const Rgb &at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  friend bool operator==(const Image &, const Image &) = default;
};

namespace detail {

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IngestionError(path.string() + ": cannot open file");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path &path, const std::vector<std::uint8_t> &bytes) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw IngestionError(path.string() + ": cannot open file for writing");
  out.write(reinterpret_cast<const char *>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw IngestionError(path.string() + ": write failed");
}

class PpmReader {
public:
  PpmReader(const std::vector<std::uint8_t> &bytes, const std::string &name) : bytes_(bytes), name_(name) {}

  // Header tokens are separated by whitespace; '#' starts a comment to end of line.
  std::size_t next_number() {
    skip_space_and_comments();
    if (pos_ >= bytes_.size() || !std::isdigit(bytes_[pos_]))
      fail("malformed PPM header");
    std::size_t v = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      v = v * 10 + (bytes_[pos_++] - '0');
      if (v > (1u << 24))
        fail("PPM header value out of range");
    }
    return v;
  }

  Image read() {
    if (bytes_.size() < 2 || bytes_[0] != 'P' || bytes_[1] != '6')
      fail("not a binary PPM");
    pos_ = 2;
    const std::size_t w = next_number();
    const std::size_t h = next_number();
    const std::size_t maxval = next_number();
    if (w == 0 || h == 0)
      fail("zero image dimension");
    if (maxval != 255)
      fail("only maxval 255 is supported");
    if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_]))
      fail("malformed PPM header");
    ++pos_; // single whitespace before raster
    if (bytes_.size() - pos_ < w * h * 3)
      fail("truncated raster (" + std::to_string(bytes_.size() - pos_) + " of " +
           std::to_string(w * h * 3) + " bytes)");
    Image img(w, h);
    for (auto &p : img.pixels) {
      p = {bytes_[pos_], bytes_[pos_ + 1], bytes_[pos_ + 2]};
      pos_ += 3;
    }
    return img;
  }

private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n')
          ++pos_;
      } else {
        break;
      }
    }
  }
  [[noreturn]] void fail(const std::string &why) const { throw IngestionError(name_ + ": " + why); }

  const std::vector<std::uint8_t> &bytes_;
  std::string name_;
  std::size_t pos_ = 0;
};

inline Image decode_png(const std::vector<std::uint8_t> &bytes, const std::string &name) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&png, bytes.data(), bytes.size()))
    throw IngestionError(name + ": " + png.message);
  png.format = PNG_FORMAT_RGB;
  if (png.width == 0 || png.height == 0) {
    png_image_free(&png);
    throw IngestionError(name + ": zero image dimension");
  }
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(png));
  if (!png_image_finish_read(&png, nullptr, raster.data(), 0, nullptr)) {
    std::string msg = png.message;
    png_image_free(&png);
    throw IngestionError(name + ": " + msg);
  }
  Image img(png.width, png.height);
  for (std::size_t i = 0; i < img.pixels.size(); ++i)
    img.pixels[i] = {raster[3 * i], raster[3 * i + 1], raster[3 * i + 2]};
  return img;
}

} // namespace detail

/// Decodes a PNG or binary PPM buffer, dispatching on the magic bytes.
inline Image decode_image_bytes(const std::vector<std::uint8_t> &bytes, const std::string &name = "<memory>") {
  static constexpr std::uint8_t png_magic[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (bytes.empty())
    throw IngestionError(name + ": empty file");
  if (bytes.size() >= 8 && std::memcmp(bytes.data(), png_magic, 8) == 0)
    return detail::decode_png(bytes, name);
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '6')
    return detail::PpmReader(bytes, name).read();
  throw IngestionError(name + ": unsupported image format (expected PNG or binary PPM)");
}

inline Image decode_image(const std::filesystem::path &path) {
  return decode_image_bytes(detail::read_file_bytes(path), path.string());
}

inline std::vector<std::uint8_t> encode_ppm(const Image &img) {
  const std::string header =
      "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + img.pixels.size() * 3);
  for (const auto &p : img.pixels) {
    out.push_back(p.r);
    out.push_back(p.g);
    out.push_back(p.b);
  }
  return out;
}

inline std::vector<std::uint8_t> encode_png(const Image &img) {
  png_image png;
  std::memset(&png, 0, sizeof(png));
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(img.width);
  png.height = static_cast<png_uint_32>(img.height);
  png.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster;
  raster.reserve(img.pixels.size() * 3);
  for (const auto &p : img.pixels) {
    raster.push_back(p.r);
    raster.push_back(p.g);
    raster.push_back(p.b);
  }
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&png, nullptr, &size, 0, raster.data(), 0, nullptr))
    throw IngestionError(std::string("PNG encode failed: ") + png.message);
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&png, out.data(), &size, 0, raster.data(), 0, nullptr))
    throw IngestionError(std::string("PNG encode failed: ") + png.message);
  out.resize(size);
  return out;
}

inline void write_ppm(const std::filesystem::path &path, const Image &img) {
  detail::write_file_bytes(path, encode_ppm(img));
}

inline void write_png(const std::filesystem::path &path, const Image &img) {
  detail::write_file_bytes(path, encode_png(img));
}

} // namespace spsmvg
