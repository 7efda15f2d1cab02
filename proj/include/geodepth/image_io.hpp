#ifndef GEODEPTH_IMAGE_IO_HPP
#define GEODEPTH_IMAGE_IO_HPP

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "geodepth/errors.hpp"
#include "geodepth/tensor.hpp"

namespace geodepth {

/// Interleaved 8-bit image.
struct Image8 {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1, 3 or 4
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
};

namespace detail {
inline png_uint_32 png_format_for(int channels) {
  switch (channels) {
    case 1: return PNG_FORMAT_GRAY;
    case 3: return PNG_FORMAT_RGB;
    case 4: return PNG_FORMAT_RGBA;
    default: throw ValidationError("PNG: unsupported channel count " + std::to_string(channels));
  }
}
}  // namespace detail

/// Reads a PNG converted to the requested channel count (1, 3 or 4).
inline Image8 read_png(const std::string& path, int channels) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw LoadError("cannot read PNG " + path + ": " + image.message);
  }
  image.format = detail::png_format_for(channels);
  Image8 out{static_cast<int>(image.width), static_cast<int>(image.height), channels, {}};
  out.pixels.resize(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw LoadError("cannot decode PNG " + path + ": " + msg);
  }
  return out;
}

inline void write_png(const std::string& path, const Image8& img) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = detail::png_format_for(img.channels);
  if (img.pixels.size() != static_cast<std::size_t>(img.width) * img.height * img.channels) {
    throw ShapeError("write_png: pixel buffer size mismatch");
  }
  if (!png_image_write_to_file(&image, path.c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw Error("cannot write PNG " + path + ": " + image.message);
  }
}

/// 8-bit to [0,1] planar tensor; 255 maps to exactly 1.
inline Tensor<float> image_to_tensor(const Image8& img) {
  Tensor<float> t(image_shape(img.channels, img.height, img.width));
  for (int c = 0; c < img.channels; ++c)
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) t.at(c, y, x) = static_cast<float>(img.at(y, x, c)) / 255.0f;
  return t;
}

/// [0,1] planar tensor to 8-bit, rounding to nearest.
template <typename T>
Image8 tensor_to_image(const Tensor<T>& t) {
  Image8 img{t.width(), t.height(), t.channels(), {}};
  img.pixels.resize(static_cast<std::size_t>(t.width()) * t.height() * t.channels());
  for (int c = 0; c < t.channels(); ++c)
    for (int y = 0; y < t.height(); ++y)
      for (int x = 0; x < t.width(); ++x) {
        const double v = std::clamp(static_cast<double>(t.at(c, y, x)), 0.0, 1.0);
        img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return img;
}

// ---------------------------------------------------------------------------
// Portable float map, single channel ("Pf"). Written little-endian (scale
// -1.0) with rows stored bottom to top.

template <typename T>
void write_pfm(const std::string& path, const Tensor<T>& map) {
  if (map.channels() != 1) throw ShapeError("write_pfm: expects a single-channel map");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write PFM " + path);
  out << "Pf\n" << map.width() << " " << map.height() << "\n-1.0\n";
  std::vector<char> row(static_cast<std::size_t>(map.width()) * 4);
  for (int y = map.height() - 1; y >= 0; --y) {
    for (int x = 0; x < map.width(); ++x) {
      const float f = static_cast<float>(map.at(0, y, x));
      std::uint32_t bits = std::bit_cast<std::uint32_t>(f);
      if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap32(bits);
      std::memcpy(row.data() + static_cast<std::size_t>(x) * 4, &bits, 4);
    }
    out.write(row.data(), static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw Error("failed writing PFM " + path);
}

inline Tensor<float> read_pfm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open PFM " + path);
  std::string magic;
  int width = 0;
  int height = 0;
  double scale = 0;
  in >> magic >> width >> height >> scale;
  if (!in || (magic != "Pf" && magic != "PF") || width <= 0 || height <= 0 || scale == 0.0) {
    throw LoadError("malformed PFM header in " + path);
  }
  in.get();  // single whitespace byte after the scale
  const int channels = magic == "PF" ? 3 : 1;
  const bool little = scale < 0;
  std::vector<char> raw(static_cast<std::size_t>(width) * height * channels * 4);
  in.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw LoadError("truncated PFM data in " + path);
  Tensor<float> out(image_shape(1, height, width));
  const bool swap = little != (std::endian::native == std::endian::little);
  for (int row = 0; row < height; ++row) {
    const int y = height - 1 - row;
    for (int x = 0; x < width; ++x) {
      // Colour maps keep their first channel.
      std::uint32_t bits;
      std::memcpy(&bits, raw.data() + ((static_cast<std::size_t>(row) * width + x) * channels) * 4, 4);
      if (swap) bits = __builtin_bswap32(bits);
      out.at(0, y, x) = std::bit_cast<float>(bits);
    }
  }
  return out;
}

}  // namespace geodepth

#endif  // GEODEPTH_IMAGE_IO_HPP
