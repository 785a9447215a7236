// faithcam: split / train / eval / explain / featmaps / synth.
//
// Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "faithcam/commands.hpp"

namespace {

struct Overrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> data;
  std::optional<std::string> manifest;
  std::optional<std::string> checkpoint;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> batch_size;
  std::optional<double> learning_rate;
  std::optional<std::string> split;
  std::vector<std::string> images;
  std::optional<std::string> method;
  std::optional<std::string> layer;
  std::optional<std::string> target_class;
  std::optional<double> alpha;
  std::optional<std::size_t> per_class;
  bool resume = false;
};

// Precedence: flags, then FAITHCAM_OUTPUT_DIR (output directory only), then
// the config file, then built-in defaults.
faithcam::RunConfig resolve(const Overrides& o) {
  auto config = o.config_path.empty() ? faithcam::RunConfig{} : faithcam::RunConfig::from_file(o.config_path);
  if (const char* env = std::getenv("FAITHCAM_OUTPUT_DIR"); env && *env) config.output_dir = env;
  if (o.seed) config.seed = *o.seed;
  if (o.out) config.output_dir = *o.out;
  if (o.data) config.dataset_root = *o.data;
  if (o.manifest) config.manifest = *o.manifest;
  if (o.checkpoint) config.checkpoint = *o.checkpoint;
  if (o.epochs) config.train.epochs = *o.epochs;
  if (o.batch_size) config.train.batch_size = *o.batch_size;
  if (o.learning_rate) config.train.learning_rate = *o.learning_rate;
  if (o.split) config.eval_split = *o.split;
  if (!o.images.empty()) config.explain.images = o.images;
  if (o.method) config.explain.method = *o.method;
  if (o.layer) config.explain.layer = *o.layer;
  if (o.target_class) config.set("explain.class", {*o.target_class});
  if (o.alpha) config.explain.alpha = *o.alpha;
  if (o.per_class) config.synth.per_class = *o.per_class;
  config.derive_seeds();
  return config;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Explainable image classification: stratified splits, CNN training, metrics, HiResCAM/Grad-CAM"};
  app.require_subcommand(1);
  app.fallthrough();

  Overrides o;
  app.add_option("-c,--config", o.config_path, "TOML-style run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "Master seed");
  app.add_option("-o,--out", o.out, "Output directory");
  app.add_option("--data", o.data, "Dataset root (one directory per family)");
  app.add_option("--manifest", o.manifest, "Split manifest path");
  app.add_option("--checkpoint", o.checkpoint, "Checkpoint path");

  auto* synth = app.add_subcommand("synth", "Generate the synthetic 4-class shape corpus");
  synth->add_option("--per-class", o.per_class, "Images per class");
  app.add_subcommand("split", "Scan the dataset and write the stratified 70/15/15 manifest");
  auto* train = app.add_subcommand("train", "Train the model on the manifest's train split");
  train->add_option("--epochs", o.epochs, "Number of epochs");
  train->add_option("--batch-size", o.batch_size, "Mini-batch size");
  train->add_option("--lr", o.learning_rate, "Learning rate");
  train->add_flag("--resume", o.resume, "Continue from the checkpoint");
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on one split");
  eval->add_option("--split", o.split, "train, val or test (default test)");
  auto* explain = app.add_subcommand("explain", "HiResCAM or Grad-CAM maps for images");
  auto* featmaps = app.add_subcommand("featmaps", "Feature-map grids for images");
  for (auto* sub : {explain, featmaps}) {
    sub->add_option("--image", o.images, "Image to explain (repeatable)");
    sub->add_option("--layer", o.layer, "Conv layer name, 'last' (or 'all' for featmaps)");
  }
  explain->add_option("--method", o.method, "hirescam or gradcam");
  explain->add_option("--class", o.target_class, "Class index to explain, or 'predicted'");
  explain->add_option("--alpha", o.alpha, "Overlay opacity in [0, 1]");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    const auto config = resolve(o);
    auto& out = std::cout;
    if (synth->parsed()) {
      faithcam::cmd_synth(config, out);
    } else if (app.got_subcommand("split")) {
      faithcam::cmd_split(config, out);
    } else if (train->parsed()) {
      faithcam::cmd_train(config, o.resume, out);
    } else if (eval->parsed()) {
      faithcam::cmd_eval(config, out);
    } else if (explain->parsed()) {
      faithcam::cmd_explain(config, out);
    } else if (featmaps->parsed()) {
      faithcam::cmd_featmaps(config, out);
    }
  } catch (const faithcam::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
