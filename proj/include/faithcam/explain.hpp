#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "faithcam/image.hpp"
#include "faithcam/model.hpp"

namespace faithcam {

enum class CamMethod { hirescam, gradcam };

std::string_view method_name(CamMethod method);
// Throws ConfigError listing the valid names.
CamMethod parse_method(std::string_view name);

struct CamMap {
  std::string layer;
  CamMethod method = CamMethod::hirescam;
  std::size_t target_class = 0;
  std::size_t height = 0, width = 0;
  std::vector<double> raw;      // signed, unrectified, height x width
  std::vector<double> display;  // rectified then min-max scaled to [0, 1]
  std::size_t upsampled_size = 0;
  std::vector<double> upsampled;  // display resampled to upsampled_size^2

  // Context of the forward pass that produced the map.
  double logit = 0;  // pre-softmax score s_c of the target class
  double bias = 0;   // head bias of the target class
  std::size_t predicted_class = 0;
  std::vector<double> probabilities;
};

// HiResCAM: raw[h][w] = sum_f dS/dA[f][h][w] * A[f][h][w], where S is the
// target logit and A the layer's activation for the single input image.
// input is 1 x C x S x S or C x S x S. Throws ModelError for unknown or
// non-convolutional layers and ValueError for an out-of-range class.
template <typename T>
CamMap hirescam(const Model<T>& model, const Tensor<T>& input, std::size_t target_class, std::string_view layer);

// Grad-CAM: raw[h][w] = sum_f alpha_f * A[f][h][w] with alpha_f the spatial
// mean of dS/dA[f].
template <typename T>
CamMap gradcam(const Model<T>& model, const Tensor<T>& input, std::size_t target_class, std::string_view layer);

// Dispatches on method; an empty target explains the argmax class.
template <typename T>
CamMap explain(const Model<T>& model, const Tensor<T>& input, CamMethod method,
               std::optional<std::size_t> target_class, std::string_view layer);

// Clamps negatives to 0 and min-max scales to [0, 1]. A constant map
// becomes all zeros.
std::vector<double> display_map(std::span<const double> raw);

// Bilinear (half-pixel) upsampling of the display map to size x size.
CamMap upsample_cam(CamMap cam, std::size_t size);

// (1 - alpha) * original + alpha * colormap(upsampled). The original must be
// upsampled_size square. Throws ShapeError on size mismatch, ValueError on
// alpha outside [0, 1].
RgbImage overlay(const CamMap& cam, const RgbImage& original, double alpha);

// Colourised upsampled display map.
RgbImage render_cam(const CamMap& cam);

// Raw map as CSV, one row per feature-map row.
void write_cam_csv(const CamMap& cam, const std::filesystem::path& path);
std::vector<double> read_cam_csv(const std::filesystem::path& path);

struct FeatureGrid {
  std::string layer;
  std::size_t tile_height = 0, tile_width = 0;
  std::size_t rows = 0, cols = 0;  // cols = ceil(sqrt(F)), rows = ceil(F / cols)
  std::vector<std::vector<double>> tiles;  // one per channel, each min-max scaled on its own
};

template <typename T>
FeatureGrid feature_grid(const Model<T>& model, const Tensor<T>& input, std::string_view layer);

// Grayscale mosaic; tiles separated by `gap` pixels.
Image8 render_feature_grid(const FeatureGrid& grid, std::size_t gap = 1);

// 3 x H x W tensor (values in [0, 1]) to an interleaved image.
template <typename T>
RgbImage tensor_to_rgb(const Tensor<T>& chw);

}  // namespace faithcam
