#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "faithcam/dataset.hpp"
#include "faithcam/model.hpp"

namespace faithcam {

struct Hyperparams {
  std::size_t epochs = 150;
  std::size_t batch_size = 8;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  bool cosine_decay = false;

  void validate() const;
};

struct EpochLog {
  std::size_t epoch = 0;  // 1-based, continues across resumed runs
  double train_loss = 0;  // mean of batch losses
  double val_loss = 0;    // mean per-sample loss over the validation split
  double top1 = 0;
  double top5 = 0;  // top-min(5, C)

  bool operator==(const EpochLog&) const = default;
};

// Images already resized to the model input, with label indices.
template <typename T>
struct LabeledSet {
  std::vector<Tensor<T>> images;  // each 3 x S x S
  std::vector<std::size_t> labels;

  std::size_t size() const { return images.size(); }
  // Stacks the selected samples into one N x 3 x S x S batch.
  Tensor<T> batch(std::span<const std::size_t> indices) const;
};

// Loads one split of a manifest; labels index into class_names.
template <typename T>
LabeledSet<T> load_split(const SplitManifest& manifest, Split split,
                         const std::vector<std::string>& class_names, std::size_t size);

struct TrainOptions {
  // When set, epoch_log.csv and checkpoints are written here.
  std::filesystem::path output_dir;
  // Called after every epoch, e.g. for progress output.
  std::function<void(const EpochLog&)> on_epoch;
};

struct TrainResult {
  std::vector<EpochLog> logs;
  std::filesystem::path final_checkpoint;  // empty when no output_dir
};

// SGD with momentum and L2 weight decay; updates are
//   v <- momentum * v + (g + weight_decay * w),  w <- w - lr * v.
template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(std::vector<NamedParameter<T>>& params, double momentum, double weight_decay);
  void step(double learning_rate);

 private:
  std::vector<NamedParameter<T>>* params_;
  std::vector<std::vector<T>> velocity_;
  T momentum_, weight_decay_;
};

// Trains for hp.epochs more epochs, starting after model.trained_epochs.
// Throws TrainingError on an empty train or validation set and on a
// non-finite batch loss (naming epoch and batch).
template <typename T>
TrainResult train(Model<T>& model, const LabeledSet<T>& train_set, const LabeledSet<T>& val_set,
                  const Hyperparams& hp, const TrainOptions& options = {});

template <typename T>
TrainResult train(Model<T>& model, const SplitManifest& manifest, const Hyperparams& hp,
                  const TrainOptions& options = {});

// Fraction of rows whose label ranks among the k largest logits. A class j
// outranks the label when its logit is larger, or equal with j < label.
template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::size_t> labels, std::size_t k);

// Argmax per row, ties to the lower index.
template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits);

// Logits for a whole set, computed in batches.
template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const LabeledSet<T>& set, std::size_t batch_size = 32);

void write_epoch_log_header(const std::filesystem::path& path);
void append_epoch_log(const std::filesystem::path& path, const EpochLog& log);
std::vector<EpochLog> read_epoch_log(const std::filesystem::path& path);

}  // namespace faithcam
