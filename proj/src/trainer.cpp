#include "faithcam/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "faithcam/rng.hpp"

namespace faithcam {

namespace fs = std::filesystem;

void Hyperparams::validate() const {
  if (epochs < 1) throw ValueError("epochs must be >= 1");
  if (batch_size < 1) throw ValueError("batch_size must be >= 1");
  if (!(learning_rate >= 0.0)) throw ValueError(fmt::format("learning_rate must be >= 0, got {}", learning_rate));
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ValueError(fmt::format("momentum must be in [0, 1), got {}", momentum));
  if (!(weight_decay >= 0.0)) throw ValueError(fmt::format("weight_decay must be >= 0, got {}", weight_decay));
}

template <typename T>
Tensor<T> LabeledSet<T>::batch(std::span<const std::size_t> indices) const {
  if (indices.empty()) throw ValueError("cannot build an empty batch");
  const Shape& one = images.at(indices[0]).shape();
  const std::size_t per = one.numel();
  std::vector<T> values;
  values.reserve(per * indices.size());
  for (std::size_t i : indices) {
    const auto& img = images.at(i);
    if (img.shape() != one) throw ShapeError("batch mixes image shapes " + one.str() + " and " + img.shape().str());
    values.insert(values.end(), img.data().begin(), img.data().end());
  }
  return Tensor<T>(Shape{indices.size(), one[0], one[1], one[2]}, std::move(values));
}

template <typename T>
LabeledSet<T> load_split(const SplitManifest& manifest, Split split,
                         const std::vector<std::string>& class_names, std::size_t size) {
  LabeledSet<T> set;
  for (const auto& r : manifest.select(split)) {
    auto it = std::find(class_names.begin(), class_names.end(), r.family);
    if (it == class_names.end()) {
      throw ValueError(fmt::format("family '{}' of {} is not in the model's label map", r.family, r.path));
    }
    set.labels.push_back(static_cast<std::size_t>(it - class_names.begin()));
    set.images.push_back(load_image<T>(r.path, size));
  }
  return set;
}

template <typename T>
SgdOptimizer<T>::SgdOptimizer(std::vector<NamedParameter<T>>& params, double momentum, double weight_decay)
    : params_(&params), momentum_(static_cast<T>(momentum)), weight_decay_(static_cast<T>(weight_decay)) {
  for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), T(0));
}

template <typename T>
void SgdOptimizer<T>::step(double learning_rate) {
  const T lr = static_cast<T>(learning_rate);
  for (std::size_t i = 0; i < params_->size(); ++i) {
    auto& param = (*params_)[i].tensor;
    auto w = param.data();
    const auto g = param.grad();
    auto& v = velocity_[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const T grad = g.empty() ? T(0) : g[j];
      v[j] = momentum_ * v[j] + (grad + weight_decay_ * w[j]);
      w[j] -= lr * v[j];
    }
  }
}

template <typename T>
std::vector<std::size_t> argmax_rows(const Tensor<T>& logits) {
  if (logits.shape().rank() != 2) throw ShapeError("argmax_rows needs an N x C matrix, got " + logits.shape().str());
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  std::vector<std::size_t> out(rows);
  const auto x = logits.data();
  for (std::size_t r = 0; r < rows; ++r) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < cols; ++c) {
      if (x[r * cols + c] > x[r * cols + best]) best = c;
    }
    out[r] = best;
  }
  return out;
}

template <typename T>
double topk_accuracy(const Tensor<T>& logits, std::span<const std::size_t> labels, std::size_t k) {
  if (logits.shape().rank() != 2) throw ShapeError("topk_accuracy needs an N x C matrix, got " + logits.shape().str());
  const std::size_t rows = logits.dim(0), cols = logits.dim(1);
  if (k < 1 || k > cols) throw ValueError(fmt::format("k = {} outside [1, {}]", k, cols));
  if (labels.size() != rows) throw ShapeError(fmt::format("{} labels for {} rows", labels.size(), rows));
  const auto x = logits.data();
  std::size_t hits = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t label = labels[r];
    if (label >= cols) throw ValueError(fmt::format("label {} outside [0, {})", label, cols));
    const T target = x[r * cols + label];
    std::size_t ahead = 0;
    for (std::size_t c = 0; c < cols; ++c) {
      const T v = x[r * cols + c];
      if (v > target || (v == target && c < label)) ++ahead;
    }
    if (ahead < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(rows);
}

template <typename T>
Tensor<T> predict_logits(const Model<T>& model, const LabeledSet<T>& set, std::size_t batch_size) {
  if (set.size() == 0) throw ValueError("predict_logits on an empty set");
  const std::size_t classes = model.num_classes();
  std::vector<T> all;
  all.reserve(set.size() * classes);
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < set.size(); start += batch_size) {
    idx.clear();
    for (std::size_t i = start; i < std::min(set.size(), start + batch_size); ++i) idx.push_back(i);
    const auto logits = model.predict(set.batch(idx)).logits;
    all.insert(all.end(), logits.data().begin(), logits.data().end());
  }
  return Tensor<T>(Shape{set.size(), classes}, std::move(all));
}

void write_epoch_log_header(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write epoch log: " + path.string());
  out << "epoch,train_loss,val_loss,top1,top5\n";
}

void append_epoch_log(const fs::path& path, const EpochLog& log) {
  std::ofstream out(path, std::ios::binary | std::ios::app);
  if (!out) throw IoError("cannot append to epoch log: " + path.string());
  out << fmt::format("{},{},{},{},{}\n", log.epoch, log.train_loss, log.val_loss, log.top1, log.top5);
}

std::vector<EpochLog> read_epoch_log(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read epoch log: " + path.string());
  std::string line;
  std::getline(in, line);
  if (line != "epoch,train_loss,val_loss,top1,top5") throw IoError("bad epoch log header in " + path.string());
  std::vector<EpochLog> logs;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream fields(line);
    EpochLog log;
    if (!(fields >> log.epoch >> log.train_loss >> log.val_loss >> log.top1 >> log.top5)) {
      throw IoError(fmt::format("{}:{}: malformed epoch log row", path.string(), line_no));
    }
    logs.push_back(log);
  }
  return logs;
}

template <typename T>
TrainResult train(Model<T>& model, const LabeledSet<T>& train_set, const LabeledSet<T>& val_set,
                  const Hyperparams& hp, const TrainOptions& options) {
  hp.validate();
  if (train_set.size() == 0) throw TrainingError("training split is empty");
  if (val_set.size() == 0) throw TrainingError("validation split is empty");

  const bool persist = !options.output_dir.empty();
  const fs::path log_path = options.output_dir / "epoch_log.csv";
  if (persist) {
    fs::create_directories(options.output_dir);
    if (model.trained_epochs == 0 || !fs::exists(log_path)) write_epoch_log_header(log_path);
  }

  const std::size_t first_epoch = model.trained_epochs + 1;
  const std::size_t k = std::min<std::size_t>(5, model.num_classes());
  SgdOptimizer<T> optimizer(model.parameters(), hp.momentum, hp.weight_decay);
  TrainResult result;

  std::vector<std::size_t> order(train_set.size());
  std::vector<std::size_t> batch_idx;
  std::vector<std::size_t> batch_labels;
  for (std::size_t e = 0; e < hp.epochs; ++e) {
    const std::size_t epoch = first_epoch + e;
    double lr = hp.learning_rate;
    if (hp.cosine_decay) {
      lr *= 0.5 * (1.0 + std::cos(3.141592653589793 * static_cast<double>(e) / static_cast<double>(hp.epochs)));
    }
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(hp.seed ^ (static_cast<std::uint64_t>(epoch) * 0x9E3779B97F4A7C15ULL));
    rng.shuffle(std::span<std::size_t>(order));

    double loss_total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += hp.batch_size, ++batches) {
      const std::size_t stop = std::min(order.size(), start + hp.batch_size);
      batch_idx.assign(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(stop));
      batch_labels.clear();
      for (std::size_t i : batch_idx) batch_labels.push_back(train_set.labels[i]);

      Tape<T> tape;
      const auto forward = model.forward(tape, train_set.batch(batch_idx));
      const auto loss = softmax_cross_entropy(tape, forward.logits, batch_labels);
      const double value = static_cast<double>(loss.loss.item());
      if (!std::isfinite(value)) {
        throw TrainingError(fmt::format("non-finite loss {} at epoch {}, batch {} (samples {}..{} of the shuffled order)",
                                        value, epoch, batches + 1, start, stop - 1));
      }
      model.zero_grad();
      tape.backward(loss.loss);
      optimizer.step(lr);
      loss_total += value;
    }

    const Tensor<T> val_logits = predict_logits(model, val_set);
    Tape<T> scratch;
    const double val_loss = static_cast<double>(softmax_cross_entropy(scratch, val_logits, val_set.labels).loss.item());

    EpochLog log{epoch, loss_total / static_cast<double>(batches), val_loss,
                 topk_accuracy(val_logits, val_set.labels, 1), topk_accuracy(val_logits, val_set.labels, k)};
    model.trained_epochs = epoch;
    result.logs.push_back(log);
    if (persist) {
      append_epoch_log(log_path, log);
      if (hp.checkpoint_every > 0 && epoch % hp.checkpoint_every == 0) {
        save_checkpoint(model, options.output_dir / fmt::format("checkpoint_epoch_{:04d}.bin", epoch));
      }
    }
    if (options.on_epoch) options.on_epoch(log);
  }
  if (persist) {
    result.final_checkpoint = options.output_dir / "model.ckpt";
    save_checkpoint(model, result.final_checkpoint);
  }
  return result;
}

template <typename T>
TrainResult train(Model<T>& model, const SplitManifest& manifest, const Hyperparams& hp,
                  const TrainOptions& options) {
  const auto size = model.config().input_size;
  const auto train_set = load_split<T>(manifest, Split::train, model.class_names(), size);
  const auto val_set = load_split<T>(manifest, Split::val, model.class_names(), size);
  return train(model, train_set, val_set, hp, options);
}

#define FAITHCAM_INSTANTIATE_TRAINER(T)                                                                      \
  template struct LabeledSet<T>;                                                                             \
  template class SgdOptimizer<T>;                                                                            \
  template LabeledSet<T> load_split(const SplitManifest&, Split, const std::vector<std::string>&, std::size_t); \
  template TrainResult train(Model<T>&, const LabeledSet<T>&, const LabeledSet<T>&, const Hyperparams&,      \
                             const TrainOptions&);                                                           \
  template TrainResult train(Model<T>&, const SplitManifest&, const Hyperparams&, const TrainOptions&);      \
  template double topk_accuracy(const Tensor<T>&, std::span<const std::size_t>, std::size_t);                \
  template std::vector<std::size_t> argmax_rows(const Tensor<T>&);                                           \
  template Tensor<T> predict_logits(const Model<T>&, const LabeledSet<T>&, std::size_t);

FAITHCAM_INSTANTIATE_TRAINER(float)
FAITHCAM_INSTANTIATE_TRAINER(double)

}  // namespace faithcam
