#include "faithcam/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "faithcam/trainer.hpp"

namespace faithcam {

namespace fs = std::filesystem;

std::string_view method_name(CamMethod method) {
  return method == CamMethod::hirescam ? "hirescam" : "gradcam";
}

CamMethod parse_method(std::string_view name) {
  if (name == "hirescam") return CamMethod::hirescam;
  if (name == "gradcam") return CamMethod::gradcam;
  throw ConfigError(fmt::format("unknown method '{}'; valid methods: hirescam, gradcam", name));
}

namespace {

template <typename T>
Tensor<T> as_batch(const Tensor<T>& input) {
  if (input.shape().rank() == 4) {
    if (input.dim(0) != 1) throw ShapeError("explanations take a single image, got batch " + input.shape().str());
    return input;
  }
  if (input.shape().rank() == 3) {
    return Tensor<T>(Shape{1, input.dim(0), input.dim(1), input.dim(2)},
                     std::vector<T>(input.data().begin(), input.data().end()));
  }
  throw ShapeError("explanations take a C x S x S image or 1 x C x S x S batch, got " + input.shape().str());
}

template <typename T>
void require_conv_layer(const Model<T>& model, std::string_view layer) {
  if (!model.is_conv_layer(layer)) {
    const auto& names = model.layer_names();
    throw ModelError(fmt::format("'{}' is not a convolutional layer; valid layers: {}", layer,
                                 fmt::join(names.begin(), names.end() - 1, ", ")));
  }
}

// Activation A and gradient dS/dA for one image at a conv layer.
struct Attribution {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> activation, gradient;
  double logit = 0, bias = 0;
  std::size_t predicted = 0;
  std::vector<double> probabilities;
};

template <typename T>
Attribution attribute(const Model<T>& model, const Tensor<T>& input, std::size_t target_class, std::string_view layer) {
  require_conv_layer(model, layer);
  if (target_class >= model.num_classes()) {
    throw ValueError(fmt::format("class {} outside [0, {})", target_class, model.num_classes()));
  }
  Tape<T> tape;
  const std::string name(layer);
  const auto forward = model.forward(tape, as_batch(input), std::span<const std::string>(&name, 1));
  const auto score = select(tape, forward.logits, 0, target_class);
  tape.backward(score);

  const auto& act = forward.captured.front().activation;
  Attribution a;
  a.channels = act.dim(1);
  a.height = act.dim(2);
  a.width = act.dim(3);
  a.activation.assign(act.data().begin(), act.data().end());
  a.gradient.assign(act.grad().begin(), act.grad().end());
  a.logit = static_cast<double>(score.item());
  a.bias = static_cast<double>(model.parameters().back().tensor.data()[target_class]);
  a.predicted = argmax_rows(forward.logits).front();
  const auto probs = softmax(forward.logits);
  a.probabilities.assign(probs.data().begin(), probs.data().end());
  return a;
}

CamMap start_map(const Attribution& a, std::string_view layer, CamMethod method, std::size_t target_class) {
  CamMap cam;
  cam.layer = std::string(layer);
  cam.method = method;
  cam.target_class = target_class;
  cam.height = a.height;
  cam.width = a.width;
  cam.raw.assign(a.height * a.width, 0.0);
  cam.logit = a.logit;
  cam.bias = a.bias;
  cam.predicted_class = a.predicted;
  cam.probabilities = a.probabilities;
  return cam;
}

}  // namespace

template <typename T>
CamMap hirescam(const Model<T>& model, const Tensor<T>& input, std::size_t target_class, std::string_view layer) {
  const Attribution a = attribute(model, input, target_class, layer);
  CamMap cam = start_map(a, layer, CamMethod::hirescam, target_class);
  const std::size_t area = a.height * a.width;
  for (std::size_t f = 0; f < a.channels; ++f) {
    for (std::size_t p = 0; p < area; ++p) cam.raw[p] += a.gradient[f * area + p] * a.activation[f * area + p];
  }
  cam.display = display_map(cam.raw);
  return cam;
}

template <typename T>
CamMap gradcam(const Model<T>& model, const Tensor<T>& input, std::size_t target_class, std::string_view layer) {
  const Attribution a = attribute(model, input, target_class, layer);
  CamMap cam = start_map(a, layer, CamMethod::gradcam, target_class);
  const std::size_t area = a.height * a.width;
  for (std::size_t f = 0; f < a.channels; ++f) {
    double alpha = 0.0;
    for (std::size_t p = 0; p < area; ++p) alpha += a.gradient[f * area + p];
    alpha /= static_cast<double>(area);
    for (std::size_t p = 0; p < area; ++p) cam.raw[p] += alpha * a.activation[f * area + p];
  }
  cam.display = display_map(cam.raw);
  return cam;
}

template <typename T>
CamMap explain(const Model<T>& model, const Tensor<T>& input, CamMethod method,
               std::optional<std::size_t> target_class, std::string_view layer) {
  std::size_t c = 0;
  if (target_class) {
    c = *target_class;
  } else {
    c = argmax_rows(model.predict(as_batch(input)).logits).front();
  }
  return method == CamMethod::hirescam ? hirescam(model, input, c, layer) : gradcam(model, input, c, layer);
}

std::vector<double> display_map(std::span<const double> raw) {
  std::vector<double> out(raw.size(), 0.0);
  if (raw.empty()) return out;
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] > 0.0 ? raw[i] : 0.0;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double min = *lo, range = *hi - *lo;
  if (!(range > 0.0)) return std::vector<double>(raw.size(), 0.0);
  for (double& v : out) v = std::clamp((v - min) / range, 0.0, 1.0);
  return out;
}

CamMap upsample_cam(CamMap cam, std::size_t size) {
  if (cam.display.size() != cam.height * cam.width || cam.display.empty()) {
    throw ValueError("upsample_cam: display map not computed");
  }
  cam.upsampled = resize_bilinear<double>(cam.display, 1, cam.height, cam.width, size, size);
  for (double& v : cam.upsampled) v = std::clamp(v, 0.0, 1.0);
  cam.upsampled_size = size;
  return cam;
}

RgbImage overlay(const CamMap& cam, const RgbImage& original, double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError(fmt::format("overlay alpha {} outside [0, 1]", alpha));
  if (cam.upsampled_size == 0) throw ValueError("overlay: upsampled map not computed");
  if (original.width != cam.upsampled_size || original.height != cam.upsampled_size) {
    throw ShapeError(fmt::format("overlay: image is {}x{} but the map is {}x{}", original.width, original.height,
                                 cam.upsampled_size, cam.upsampled_size));
  }
  RgbImage out = original;
  for (std::size_t y = 0; y < original.height; ++y) {
    for (std::size_t x = 0; x < original.width; ++x) {
      const auto color = colormap(cam.upsampled[y * cam.upsampled_size + x]);
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<float>((1.0 - alpha) * original.at(y, x, c) + alpha * color[c]);
      }
    }
  }
  return out;
}

RgbImage render_cam(const CamMap& cam) {
  if (cam.upsampled_size == 0) throw ValueError("render_cam: upsampled map not computed");
  const std::size_t s = cam.upsampled_size;
  RgbImage out{s, s, std::vector<float>(s * s * 3)};
  for (std::size_t i = 0; i < s * s; ++i) {
    const auto color = colormap(cam.upsampled[i]);
    for (std::size_t c = 0; c < 3; ++c) out.rgb[i * 3 + c] = color[c];
  }
  return out;
}

void write_cam_csv(const CamMap& cam, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  for (std::size_t y = 0; y < cam.height; ++y) {
    for (std::size_t x = 0; x < cam.width; ++x) {
      out << (x ? "," : "") << fmt::format("{}", cam.raw[y * cam.width + x]);
    }
    out << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<double> read_cam_csv(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<double> values;
  std::string line;
  while (std::getline(in, line)) {
    std::stringstream row(line);
    std::string cell;
    while (std::getline(row, cell, ',')) values.push_back(std::stod(cell));
  }
  return values;
}

template <typename T>
FeatureGrid feature_grid(const Model<T>& model, const Tensor<T>& input, std::string_view layer) {
  require_conv_layer(model, layer);
  const std::string name(layer);
  const auto result = model.predict(as_batch(input), std::span<const std::string>(&name, 1));
  const auto& act = result.captured.front().activation;
  FeatureGrid grid;
  grid.layer = name;
  const std::size_t channels = act.dim(1);
  grid.tile_height = act.dim(2);
  grid.tile_width = act.dim(3);
  grid.cols = static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(channels))));
  grid.rows = (channels + grid.cols - 1) / grid.cols;
  const std::size_t area = grid.tile_height * grid.tile_width;
  for (std::size_t f = 0; f < channels; ++f) {
    const auto values = act.data().subspan(f * area, area);
    std::vector<double> tile(values.begin(), values.end());
    const auto [lo, hi] = std::minmax_element(tile.begin(), tile.end());
    const double min = *lo, range = *hi - *lo;
    for (double& v : tile) v = range > 0.0 ? (v - min) / range : 0.0;
    grid.tiles.push_back(std::move(tile));
  }
  return grid;
}

Image8 render_feature_grid(const FeatureGrid& grid, std::size_t gap) {
  const std::size_t width = grid.cols * grid.tile_width + (grid.cols + 1) * gap;
  const std::size_t height = grid.rows * grid.tile_height + (grid.rows + 1) * gap;
  Image8 img{width, height, std::vector<std::uint8_t>(width * height * 3, 48)};
  for (std::size_t t = 0; t < grid.tiles.size(); ++t) {
    const std::size_t oy = gap + (t / grid.cols) * (grid.tile_height + gap);
    const std::size_t ox = gap + (t % grid.cols) * (grid.tile_width + gap);
    for (std::size_t y = 0; y < grid.tile_height; ++y) {
      for (std::size_t x = 0; x < grid.tile_width; ++x) {
        const auto v = static_cast<std::uint8_t>(std::lround(grid.tiles[t][y * grid.tile_width + x] * 255.0));
        for (std::size_t c = 0; c < 3; ++c) img.at(oy + y, ox + x, c) = v;
      }
    }
  }
  return img;
}

template <typename T>
RgbImage tensor_to_rgb(const Tensor<T>& chw) {
  if (chw.shape().rank() != 3 || chw.dim(0) != 3) throw ShapeError("expected a 3 x H x W tensor, got " + chw.shape().str());
  const std::size_t h = chw.dim(1), w = chw.dim(2);
  RgbImage img{w, h, std::vector<float>(w * h * 3)};
  const auto x = chw.data();
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < h * w; ++i) img.rgb[i * 3 + c] = static_cast<float>(x[c * h * w + i]);
  }
  return img;
}

#define FAITHCAM_INSTANTIATE_EXPLAIN(T)                                                                     \
  template CamMap hirescam(const Model<T>&, const Tensor<T>&, std::size_t, std::string_view);                \
  template CamMap gradcam(const Model<T>&, const Tensor<T>&, std::size_t, std::string_view);                 \
  template CamMap explain(const Model<T>&, const Tensor<T>&, CamMethod, std::optional<std::size_t>,          \
                          std::string_view);                                                                \
  template FeatureGrid feature_grid(const Model<T>&, const Tensor<T>&, std::string_view);                    \
  template RgbImage tensor_to_rgb(const Tensor<T>&);

FAITHCAM_INSTANTIATE_EXPLAIN(float)
FAITHCAM_INSTANTIATE_EXPLAIN(double)

}  // namespace faithcam
