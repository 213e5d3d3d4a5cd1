// Binary PPM (P6) reader and writer.
#pragma once

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "conflictnet/error.hpp"

namespace conflictnet {

/// Interleaved 8-bit RGB image.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // height × width × 3

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h * 3, fill) {}

  std::uint8_t* at(std::size_t x, std::size_t y) noexcept { return pixels.data() + (y * width + x) * 3; }
  const std::uint8_t* at(std::size_t x, std::size_t y) const noexcept { return pixels.data() + (y * width + x) * 3; }
};

inline std::string encode_ppm(const RgbImage& img) {
  std::string out = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
  return out;
}

/// Decodes a P6 image; `source` only labels error messages.
inline RgbImage decode_ppm(std::string_view bytes, const std::string& source = "<memory>") {
  std::size_t pos = 0;
  auto fail = [&](const std::string& why) -> DataError { return DataError(source + ": malformed PPM header: " + why); };
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_uint = [&](const char* what) {
    skip_space();
    if (pos >= bytes.size() || !std::isdigit(static_cast<unsigned char>(bytes[pos])))
      throw fail(std::string("expected ") + what);
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) {
      v = v * 10 + static_cast<std::size_t>(bytes[pos] - '0');
      if (v > (1u << 24)) throw fail(std::string(what) + " too large");
      ++pos;
    }
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P') throw fail("missing P6 magic");
  const char kind = bytes[1];
  if (kind == '5' || kind == '2')
    throw DataError(source + ": wrong channel count: grayscale PGM (P" + std::string(1, kind) + "), expected RGB P6");
  if (kind != '6') throw fail("unsupported magic P" + std::string(1, kind));
  pos = 2;
  const std::size_t w = read_uint("width");
  const std::size_t h = read_uint("height");
  const std::size_t maxval = read_uint("maxval");
  if (w == 0 || h == 0) throw fail("zero image dimension");
  if (maxval == 0 || maxval > 255) throw fail("maxval must be in 1..255, got " + std::to_string(maxval));
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
    throw fail("missing whitespace after maxval");
  ++pos;
  const std::size_t need = w * h * 3;
  if (bytes.size() - pos < need)
    throw DataError(source + ": truncated PPM pixel data (" + std::to_string(bytes.size() - pos) + " of " +
                    std::to_string(need) + " bytes)");
  RgbImage img(w, h);
  for (std::size_t i = 0; i < need; ++i) {
    const auto v = static_cast<std::uint8_t>(bytes[pos + i]);
    img.pixels[i] = maxval == 255 ? v : static_cast<std::uint8_t>((v * 255u + maxval / 2) / maxval);
  }
  return img;
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(path.string() + ": missing frame file");
  const std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return decode_ppm(bytes, path.string());
}

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError("cannot open " + path.string() + " for writing");
  const std::string bytes = encode_ppm(img);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw DataError("write failed for " + path.string());
}

}  // namespace conflictnet
