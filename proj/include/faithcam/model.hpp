#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <optional>
#include <string>
#include <vector>

#include "faithcam/ops.hpp"
#include "faithcam/tensor.hpp"

namespace faithcam {

struct ConvBlockConfig {
  std::size_t out_channels = 16;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  bool use_pool = true;  // 2x2 max-pool, stride 2

  bool operator==(const ConvBlockConfig&) const = default;
};

// Conv blocks (conv -> relu -> optional pool), then global average pooling
// and a single affine layer. The head is fixed: it is what makes the sum of a
// last-layer HiResCAM map equal the class logit minus its bias.
struct ModelConfig {
  std::size_t input_size = 64;
  std::size_t input_channels = 3;
  std::vector<ConvBlockConfig> blocks;
  std::size_t num_classes = 2;
  std::uint64_t seed = 0;

  // 3 blocks of 16/32/64 channels, 3x3 stride 1 pad 1, each pooled: 64 -> 8.
  static ModelConfig desk_default(std::size_t num_classes, std::uint64_t seed = 0);

  // Throws ModelError on empty blocks, fewer than 2 classes, or a block whose
  // output would collapse below 1x1.
  void validate() const;

  // Spatial side length after each block, e.g. {32, 16, 8} for the default.
  std::vector<std::size_t> feature_sizes() const;

  bool operator==(const ModelConfig&) const = default;
};

// Input rectangle [row_begin, row_end) x [col_begin, col_end) that can
// influence one feature-map cell, clipped to the image.
struct ReceptiveField {
  std::size_t row_begin = 0, row_end = 0, col_begin = 0, col_end = 0;

  bool contains(std::size_t row, std::size_t col) const {
    return row >= row_begin && row < row_end && col >= col_begin && col < col_end;
  }
};

template <typename T>
struct ActivationRecord {
  std::string layer;
  Tensor<T> activation;                // N x F x H x W for conv layers, N x C for "head"
  std::optional<Tensor<T>> gradient;   // d s_c / d activation, once a backward pass filled it
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;
  std::vector<ActivationRecord<T>> captured;  // in the order requested

  const ActivationRecord<T>& record(std::string_view layer) const;
};

template <typename T>
struct NamedParameter {
  std::string name;  // "conv1.weight", "head.bias", ...
  Tensor<T> tensor;
};

template <typename T>
class Model {
 public:
  explicit Model(ModelConfig config);

  const ModelConfig& config() const { return config_; }
  std::size_t num_classes() const { return config_.num_classes; }

  // "conv1", ..., "convN", "head".
  const std::vector<std::string>& layer_names() const { return layer_names_; }
  std::string last_conv_layer() const { return layer_names_[layer_names_.size() - 2]; }
  bool is_conv_layer(std::string_view name) const;

  // Class index -> family name; defaults to "class0", "class1", ...
  const std::vector<std::string>& class_names() const { return class_names_; }
  void set_class_names(std::vector<std::string> names);

  std::vector<NamedParameter<T>>& parameters() { return params_; }
  const std::vector<NamedParameter<T>>& parameters() const { return params_; }
  std::size_t parameter_count() const;

  // Forward pass recorded on a caller-owned tape, so the caller can
  // backpropagate from any logit. Conv layer "convK" captures the block
  // output (after relu and pooling); "head" captures the logits.
  ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& batch,
                           std::span<const std::string> capture = {}) const;

  // Inference on a private tape. Captured records carry no gradient.
  ForwardResult<T> predict(const Tensor<T>& batch, std::span<const std::string> capture = {}) const;

  // Input region that can influence cell (row, col) of a conv layer's output.
  ReceptiveField receptive_field(std::string_view layer, std::size_t row, std::size_t col) const;

  void zero_grad();

  // Epochs of training this model has seen; persisted in checkpoints so a
  // resumed run continues its epoch numbering.
  std::size_t trained_epochs = 0;

 private:
  std::size_t layer_index(std::string_view name) const;

  ModelConfig config_;
  std::vector<std::string> layer_names_;
  std::vector<std::string> class_names_;
  std::vector<NamedParameter<T>> params_;
};

// Versioned binary container, see docs/checkpoint_format.md.
template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);

template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

}  // namespace faithcam
