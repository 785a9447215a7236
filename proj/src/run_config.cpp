#include "faithcam/run_config.hpp"

#include <algorithm>
#include <charconv>

#include <CLI11.hpp>
#include <fmt/format.h>

namespace faithcam {

namespace fs = std::filesystem;

fs::path RunConfig::manifest_path() const { return manifest.empty() ? output_dir / "manifest.csv" : manifest; }

fs::path RunConfig::checkpoint_path() const { return checkpoint.empty() ? output_dir / "model.ckpt" : checkpoint; }

void RunConfig::derive_seeds() {
  model.seed = seed + 1;
  train.seed = seed + 2;
  synth.seed = seed + 3;
}

namespace {

const std::string& single(const std::string& key, const std::vector<std::string>& values) {
  if (values.size() != 1) throw ConfigError(fmt::format("'{}' expects a single value, got {}", key, values.size()));
  return values.front();
}

template <typename U>
U to_unsigned(const std::string& key, const std::string& text) {
  U value{};
  const auto* end = text.data() + text.size();
  const auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc{} || ptr != end) throw ConfigError(fmt::format("'{}': expected a non-negative integer, got '{}'", key, text));
  return value;
}

double to_double(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::logic_error&) {
    throw ConfigError(fmt::format("'{}': expected a number, got '{}'", key, text));
  }
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError(fmt::format("'{}': expected true or false, got '{}'", key, text));
}

}  // namespace

void RunConfig::set(const std::string& key, const std::vector<std::string>& values) {
  auto one = [&]() -> const std::string& { return single(key, values); };
  auto size = [&] { return to_unsigned<std::size_t>(key, one()); };

  if (key == "seed") {
    seed = to_unsigned<std::uint64_t>(key, one());
  } else if (key == "output_dir") {
    output_dir = one();
  } else if (key == "data.root") {
    dataset_root = one();
  } else if (key == "data.input_size") {
    model.input_size = size();
  } else if (key == "data.manifest") {
    manifest = one();
  } else if (key == "model.channels") {
    if (values.empty()) throw ConfigError("'model.channels' needs at least one entry");
    const auto proto = model.blocks.empty() ? ConvBlockConfig{} : model.blocks.front();
    model.blocks.clear();
    for (const auto& v : values) {
      auto block = proto;
      block.out_channels = to_unsigned<std::size_t>(key, v);
      model.blocks.push_back(block);
    }
  } else if (key == "model.kernel" || key == "model.stride" || key == "model.padding") {
    const auto v = size();
    for (auto& b : model.blocks) {
      if (key == "model.kernel") b.kernel = v;
      if (key == "model.stride") b.stride = v;
      if (key == "model.padding") b.padding = v;
    }
  } else if (key == "model.pool") {
    if (values.size() == 1) {
      const bool on = to_bool(key, values[0]);
      for (auto& b : model.blocks) b.use_pool = on;
    } else {
      if (values.size() != model.blocks.size()) {
        throw ConfigError(fmt::format("'model.pool' has {} entries for {} blocks", values.size(), model.blocks.size()));
      }
      for (std::size_t i = 0; i < values.size(); ++i) model.blocks[i].use_pool = to_bool(key, values[i]);
    }
  } else if (key == "train.epochs") {
    train.epochs = size();
  } else if (key == "train.batch_size") {
    train.batch_size = size();
  } else if (key == "train.learning_rate") {
    train.learning_rate = to_double(key, one());
  } else if (key == "train.momentum") {
    train.momentum = to_double(key, one());
  } else if (key == "train.weight_decay") {
    train.weight_decay = to_double(key, one());
  } else if (key == "train.checkpoint_every") {
    train.checkpoint_every = size();
  } else if (key == "train.cosine_decay") {
    train.cosine_decay = to_bool(key, one());
  } else if (key == "eval.split") {
    eval_split = one();
  } else if (key == "eval.checkpoint") {
    checkpoint = one();
  } else if (key == "explain.images") {
    explain.images = values;
  } else if (key == "explain.layer") {
    explain.layer = one();
  } else if (key == "explain.method") {
    explain.method = one();
  } else if (key == "explain.class") {
    if (one() == "predicted" || one().empty()) {
      explain.target_class.reset();
    } else {
      explain.target_class = size();
    }
  } else if (key == "explain.alpha") {
    explain.alpha = to_double(key, one());
  } else if (key == "synth.per_class") {
    synth.per_class = size();
  } else if (key == "synth.size") {
    synth.size = size();
  } else {
    throw ConfigError(fmt::format("unknown configuration key '{}'", key));
  }
}

RunConfig RunConfig::from_file(const fs::path& path) {
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigTOML().from_file(path.string());
  } catch (const CLI::Error& e) {
    throw ConfigError(fmt::format("cannot read config {}: {}", path.string(), e.what()));
  }
  RunConfig config;
  // model.channels redefines the block list, so apply it before per-block keys.
  std::stable_sort(items.begin(), items.end(), [](const CLI::ConfigItem& a, const CLI::ConfigItem& b) {
    return (a.fullname() == "model.channels") > (b.fullname() == "model.channels");
  });
  for (const auto& item : items) {
    if (item.name == "++" || item.name == "--") continue;
    config.set(item.fullname(), item.inputs);
  }
  config.derive_seeds();
  return config;
}

}  // namespace faithcam
