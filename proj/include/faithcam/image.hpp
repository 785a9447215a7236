#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace faithcam {

// 8-bit RGB raster, row-major, interleaved.
struct Image8 {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  std::uint8_t& at(std::size_t row, std::size_t col, std::size_t channel) {
    return rgb[(row * width + col) * 3 + channel];
  }
  std::uint8_t at(std::size_t row, std::size_t col, std::size_t channel) const {
    return rgb[(row * width + col) * 3 + channel];
  }
};

// Real-valued RGB raster in [0, 1], row-major, interleaved.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<float> rgb;

  float& at(std::size_t row, std::size_t col, std::size_t channel) {
    return rgb[(row * width + col) * 3 + channel];
  }
  float at(std::size_t row, std::size_t col, std::size_t channel) const {
    return rgb[(row * width + col) * 3 + channel];
  }
};

// PNG or JPEG (detected from the file signature). Grayscale sources are
// replicated to three channels; alpha is dropped. Throws ImageError naming
// the path on any decode failure.
Image8 decode_image(const std::filesystem::path& path);

// Optional tEXt chunks are written as key/value pairs.
void write_png(const std::filesystem::path& path, const Image8& image,
               const std::vector<std::pair<std::string, std::string>>& text = {});

Image8 to_image8(const RgbImage& image);
RgbImage to_rgb(const Image8& image);

// Bilinear resampling of planar data (channels x in_h x in_w) with
// half-pixel-centred coordinates: destination pixel x samples source
// position (x + 0.5) * in_w / out_w - 0.5, clamped to the border.
template <typename T>
std::vector<T> resize_bilinear(std::span<const T> planes, std::size_t channels, std::size_t in_h,
                               std::size_t in_w, std::size_t out_h, std::size_t out_w);

// Blue -> cyan -> green -> yellow -> red, piecewise linear over [0, 1] with
// knots at 0, 0.25, 0.5, 0.75, 1. Inputs outside [0, 1] are clamped.
std::array<float, 3> colormap(double value);

}  // namespace faithcam
