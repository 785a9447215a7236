#include "faithcam/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <fmt/ranges.h>

#include "faithcam/rng.hpp"

namespace faithcam {

ModelConfig ModelConfig::desk_default(std::size_t num_classes, std::uint64_t seed) {
  ModelConfig config;
  config.input_size = 64;
  config.input_channels = 3;
  config.blocks = {{16, 3, 1, 1, true}, {32, 3, 1, 1, true}, {64, 3, 1, 1, true}};
  config.num_classes = num_classes;
  config.seed = seed;
  return config;
}

std::vector<std::size_t> ModelConfig::feature_sizes() const {
  std::vector<std::size_t> sizes;
  std::size_t side = input_size;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    const auto& b = blocks[i];
    if (b.kernel == 0 || b.stride == 0 || b.out_channels == 0) {
      throw ModelError(fmt::format("block {}: kernel, stride and channels must be positive", i + 1));
    }
    if (side + 2 * b.padding < b.kernel) {
      throw ModelError(fmt::format("block {}: kernel {} does not fit a {}x{} input with padding {}",
                                   i + 1, b.kernel, side, side, b.padding));
    }
    side = (side + 2 * b.padding - b.kernel) / b.stride + 1;
    if (b.use_pool) {
      if (side < 2) {
        throw ModelError(fmt::format("block {}: {}x{} feature map too small for 2x2 pooling", i + 1,
                                     side, side));
      }
      side = (side - 2) / 2 + 1;
    }
    sizes.push_back(side);
  }
  return sizes;
}

void ModelConfig::validate() const {
  if (blocks.empty()) throw ModelError("model needs at least one conv block");
  if (num_classes < 2) throw ModelError(fmt::format("num_classes must be >= 2, got {}", num_classes));
  if (input_size == 0 || input_channels == 0) throw ModelError("input size and channels must be positive");
  feature_sizes();
}

template <typename T>
const ActivationRecord<T>& ForwardResult<T>::record(std::string_view layer) const {
  for (const auto& r : captured) {
    if (r.layer == layer) return r;
  }
  throw ModelError(fmt::format("layer '{}' was not captured", layer));
}

template <typename T>
Model<T>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    layer_names_.push_back(fmt::format("conv{}", i + 1));
  }
  layer_names_.push_back("head");
  for (std::size_t c = 0; c < config_.num_classes; ++c) class_names_.push_back(fmt::format("class{}", c));

  // He-uniform fan-in scaling, zero biases.
  Rng rng(config_.seed);
  auto init = [&](std::string name, Shape shape, std::size_t fan_in) {
    Tensor<T> t(shape);
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (T& v : t.data()) v = static_cast<T>(rng.uniform(-limit, limit));
    t.set_requires_grad(true);
    params_.push_back({std::move(name), t});
  };
  auto zeros = [&](std::string name, Shape shape) {
    Tensor<T> t(shape);
    t.set_requires_grad(true);
    params_.push_back({std::move(name), t});
  };
  std::size_t in_ch = config_.input_channels;
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const auto& b = config_.blocks[i];
    init(layer_names_[i] + ".weight", Shape{b.out_channels, in_ch, b.kernel, b.kernel},
         in_ch * b.kernel * b.kernel);
    zeros(layer_names_[i] + ".bias", Shape{b.out_channels});
    in_ch = b.out_channels;
  }
  init("head.weight", Shape{config_.num_classes, in_ch}, in_ch);
  zeros("head.bias", Shape{config_.num_classes});
}

template <typename T>
void Model<T>::set_class_names(std::vector<std::string> names) {
  if (names.size() != config_.num_classes) {
    throw ModelError(fmt::format("{} class names for a {}-class model", names.size(), config_.num_classes));
  }
  class_names_ = std::move(names);
}

template <typename T>
bool Model<T>::is_conv_layer(std::string_view name) const {
  return std::find(layer_names_.begin(), layer_names_.end() - 1, name) != layer_names_.end() - 1;
}

template <typename T>
std::size_t Model<T>::layer_index(std::string_view name) const {
  auto it = std::find(layer_names_.begin(), layer_names_.end(), name);
  if (it == layer_names_.end()) {
    throw ModelError(fmt::format("unknown layer '{}'; valid layers: {}", name, fmt::join(layer_names_, ", ")));
  }
  return static_cast<std::size_t>(it - layer_names_.begin());
}

template <typename T>
std::size_t Model<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.numel();
  return n;
}

template <typename T>
ForwardResult<T> Model<T>::forward(Tape<T>& tape, const Tensor<T>& batch,
                                   std::span<const std::string> capture) const {
  const auto& s = batch.shape();
  if (s.rank() != 4 || s[1] != config_.input_channels || s[2] != config_.input_size ||
      s[3] != config_.input_size) {
    throw ShapeError(fmt::format("model expects N x {} x {} x {} input, got {}", config_.input_channels,
                                 config_.input_size, config_.input_size, s.str()));
  }
  std::vector<bool> wanted(layer_names_.size(), false);
  for (const auto& name : capture) wanted[layer_index(name)] = true;

  ForwardResult<T> result;
  std::vector<std::optional<Tensor<T>>> taken(layer_names_.size());
  Tensor<T> x = batch;
  for (std::size_t i = 0; i < config_.blocks.size(); ++i) {
    const auto& b = config_.blocks[i];
    x = conv2d(tape, x, params_[2 * i].tensor, params_[2 * i + 1].tensor, b.stride, b.padding);
    x = relu(tape, x);
    if (b.use_pool) x = max_pool2d(tape, x, 2, 2);
    if (wanted[i]) taken[i] = x;
  }
  const std::size_t head = 2 * config_.blocks.size();
  x = global_avg_pool(tape, x);
  result.logits = affine(tape, x, params_[head].tensor, params_[head + 1].tensor);
  if (wanted.back()) taken.back() = result.logits;

  for (const auto& name : capture) {
    result.captured.push_back({name, *taken[layer_index(name)], std::nullopt});
  }
  return result;
}

template <typename T>
ForwardResult<T> Model<T>::predict(const Tensor<T>& batch, std::span<const std::string> capture) const {
  Tape<T> tape;
  ForwardResult<T> attached = forward(tape, batch, capture);
  ForwardResult<T> detached;
  detached.logits = attached.logits.clone();
  for (const auto& r : attached.captured) detached.captured.push_back({r.layer, r.activation.clone(), std::nullopt});
  return detached;
}

template <typename T>
ReceptiveField Model<T>::receptive_field(std::string_view layer, std::size_t row, std::size_t col) const {
  const std::size_t index = layer_index(layer);
  if (index >= config_.blocks.size()) {
    throw ModelError(fmt::format("receptive field is defined for conv layers, not '{}'", layer));
  }
  const auto sizes = config_.feature_sizes();
  if (row >= sizes[index] || col >= sizes[index]) {
    throw ShapeError(fmt::format("cell ({}, {}) outside {}x{} map of {}", row, col, sizes[index],
                                 sizes[index], layer));
  }
  auto lo_r = static_cast<std::ptrdiff_t>(row), hi_r = lo_r;
  auto lo_c = static_cast<std::ptrdiff_t>(col), hi_c = lo_c;
  for (std::size_t i = index + 1; i-- > 0;) {
    const auto& b = config_.blocks[i];
    if (b.use_pool) {
      lo_r *= 2, lo_c *= 2;
      hi_r = hi_r * 2 + 1, hi_c = hi_c * 2 + 1;
    }
    const auto stride = static_cast<std::ptrdiff_t>(b.stride);
    const auto pad = static_cast<std::ptrdiff_t>(b.padding);
    const auto k = static_cast<std::ptrdiff_t>(b.kernel);
    lo_r = lo_r * stride - pad, lo_c = lo_c * stride - pad;
    hi_r = hi_r * stride - pad + k - 1, hi_c = hi_c * stride - pad + k - 1;
  }
  const auto side = static_cast<std::ptrdiff_t>(config_.input_size);
  auto clip = [side](std::ptrdiff_t v) { return static_cast<std::size_t>(std::clamp<std::ptrdiff_t>(v, 0, side)); };
  return {clip(lo_r), clip(hi_r + 1), clip(lo_c), clip(hi_c + 1)};
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

template struct ForwardResult<float>;
template struct ForwardResult<double>;
template class Model<float>;
template class Model<double>;

}  // namespace faithcam
