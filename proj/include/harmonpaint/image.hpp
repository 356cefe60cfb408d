#pragma once

// 8-bit images and PNG I/O through libpng's simplified API.

#include "harmonpaint/mask_ops.hpp"

#include <png.h>

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace harmonpaint {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // interleaved RGB, row-major

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  [[nodiscard]] std::uint8_t& at(int y, int x, int c) {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  [[nodiscard]] std::uint8_t at(int y, int x, int c) const {
    return pixels[(static_cast<std::size_t>(y) * width + x) * 3 + c];
  }
  bool operator==(const RgbImage&) const = default;
};

struct GrayImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  GrayImage() = default;
  GrayImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, 0) {}

  [[nodiscard]] std::uint8_t& at(int y, int x) { return pixels[static_cast<std::size_t>(y) * width + x]; }
  [[nodiscard]] std::uint8_t at(int y, int x) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
  bool operator==(const GrayImage&) const = default;
};

/// Pixel value >= 128 maps to 1 (masked).
inline BinaryMask mask_from_gray(const GrayImage& image) {
  std::vector<std::uint8_t> values(image.pixels.size());
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = image.pixels[i] >= 128 ? 1 : 0;
  return BinaryMask({image.height, image.width}, std::move(values));
}

inline GrayImage gray_from_mask(const BinaryMask& mask) {
  GrayImage image(mask.width(), mask.height());
  const auto values = mask.values();
  for (std::size_t i = 0; i < values.size(); ++i) image.pixels[i] = values[i] ? 255 : 0;
  return image;
}

namespace detail {

inline std::vector<std::uint8_t> read_png(const std::filesystem::path& path, std::uint32_t format, int& width,
                                          int& height) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str()))
    throw std::runtime_error("cannot read PNG '" + path.string() + "': " + image.message);
  image.format = format;
  std::vector<std::uint8_t> buffer(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr)) {
    png_image_free(&image);
    throw std::runtime_error("cannot decode PNG '" + path.string() + "': " + image.message);
  }
  width = static_cast<int>(image.width);
  height = static_cast<int>(image.height);
  return buffer;
}

inline void write_png(const std::filesystem::path& path, std::uint32_t format, int width, int height,
                      const std::vector<std::uint8_t>& pixels) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, pixels.data(), 0, nullptr))
    throw std::runtime_error("cannot write PNG '" + path.string() + "': " + image.message);
}

}  // namespace detail

inline RgbImage read_rgb_png(const std::filesystem::path& path) {
  RgbImage img;
  img.pixels = detail::read_png(path, PNG_FORMAT_RGB, img.width, img.height);
  return img;
}

inline GrayImage read_gray_png(const std::filesystem::path& path) {
  GrayImage img;
  img.pixels = detail::read_png(path, PNG_FORMAT_GRAY, img.width, img.height);
  return img;
}

inline void write_png(const std::filesystem::path& path, const RgbImage& image) {
  detail::write_png(path, PNG_FORMAT_RGB, image.width, image.height, image.pixels);
}

inline void write_png(const std::filesystem::path& path, const GrayImage& image) {
  detail::write_png(path, PNG_FORMAT_GRAY, image.width, image.height, image.pixels);
}

}  // namespace harmonpaint
