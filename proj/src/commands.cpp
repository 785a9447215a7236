#include "faithcam/commands.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>

#include "faithcam/dataset.hpp"

namespace faithcam {

namespace fs = std::filesystem;

namespace {

Model<Real> load_model(const RunConfig& config) {
  const auto path = config.checkpoint_path();
  if (!fs::exists(path)) throw CheckpointError("checkpoint not found: " + path.string());
  return load_checkpoint<Real>(path);
}

void check_label_map(const Model<Real>& model, const SplitManifest& manifest) {
  const auto families = manifest.families();
  if (families != model.class_names()) {
    throw ValueError(fmt::format("label map mismatch: checkpoint has [{}], manifest has [{}]",
                                 fmt::join(model.class_names(), ", "), fmt::join(families, ", ")));
  }
}

std::string resolve_layer(const Model<Real>& model, const std::string& layer) {
  return layer == "last" ? model.last_conv_layer() : layer;
}

}  // namespace

void cmd_synth(const RunConfig& config, std::ostream& out) {
  if (config.dataset_root.empty()) throw ConfigError("synth needs data.root");
  const auto n = write_synthetic_corpus(config.dataset_root, config.synth);
  fmt::print(out, "wrote {} images ({} per class, {}x{}) to {}\n", n, config.synth.per_class, config.synth.size,
             config.synth.size, config.dataset_root.string());
}

SplitManifest cmd_split(const RunConfig& config, std::ostream& out) {
  if (config.dataset_root.empty()) throw ConfigError("split needs data.root");
  const auto index = scan_dataset(config.dataset_root);
  const auto manifest = stratified_split(index, config.seed);
  write_manifest(manifest, config.manifest_path());
  const auto table = config.output_dir / "split_counts.csv";
  write_split_table(manifest, table);

  fmt::print(out, "{:<20} {:>7} {:>7} {:>7} {:>7}\n", "family", "train", "val", "test", "total");
  SplitCounts total;
  for (const auto& [family, c] : manifest.counts()) {
    fmt::print(out, "{:<20} {:>7} {:>7} {:>7} {:>7}\n", family, c.train, c.val, c.test, c.train + c.val + c.test);
    total.train += c.train, total.val += c.val, total.test += c.test;
  }
  fmt::print(out, "{:<20} {:>7} {:>7} {:>7} {:>7}\n", "Total", total.train, total.val, total.test,
             total.train + total.val + total.test);
  if (!index.warnings.empty()) fmt::print(out, "{} warnings while scanning\n", index.warnings.size());
  fmt::print(out, "manifest: {}\n", config.manifest_path().string());
  return manifest;
}

TrainResult cmd_train(const RunConfig& config, bool resume, std::ostream& out) {
  const auto manifest = read_manifest(config.manifest_path());
  const auto families = manifest.families();

  auto model = [&] {
    if (resume) {
      auto m = load_model(config);
      check_label_map(m, manifest);
      fmt::print(out, "resuming from {} after epoch {}\n", config.checkpoint_path().string(), m.trained_epochs);
      return m;
    }
    ModelConfig mc = config.model;
    mc.num_classes = families.size();
    Model<Real> m(mc);
    m.set_class_names(families);
    return m;
  }();

  TrainOptions options;
  options.output_dir = config.output_dir;
  options.on_epoch = [&out](const EpochLog& log) {
    fmt::print(out, "epoch {:4d}  train_loss {:.5f}  val_loss {:.5f}  top1 {:.4f}  top5 {:.4f}\n", log.epoch,
               log.train_loss, log.val_loss, log.top1, log.top5);
  };
  auto result = train(model, manifest, config.train, options);
  const auto& last = result.logs.back();
  fmt::print(out, "final top1 {:.4f} top5 {:.4f}\ncheckpoint: {}\n", last.top1, last.top5,
             result.final_checkpoint.string());
  return result;
}

MetricsReport cmd_eval(const RunConfig& config, std::ostream& out) {
  Split split;
  try {
    split = parse_split(config.eval_split);
  } catch (const ValueError& e) {
    throw ConfigError(e.what());
  }
  const auto model = load_model(config);
  const auto manifest = read_manifest(config.manifest_path());
  check_label_map(model, manifest);
  const auto set = load_split<Real>(manifest, split, model.class_names(), model.config().input_size);
  if (set.size() == 0) throw DatasetError(fmt::format("split '{}' is empty", config.eval_split));

  const auto predicted = argmax_rows(predict_logits(model, set));
  const auto cm = confusion_matrix(set.labels, predicted, model.num_classes(), model.class_names());
  const auto report = per_class_metrics(cm);
  const auto dir = config.output_dir / fmt::format("eval_{}", config.eval_split);
  write_report(report, cm, dir);

  fmt::print(out, "split {} ({} images)\n", config.eval_split, report.total);
  fmt::print(out, "{:<20} {:>9} {:>9} {:>9} {:>9}\n", "family", "precision", "recall", "f1", "accuracy");
  for (const auto& m : report.per_class) {
    fmt::print(out, "{:<20} {:>9.4f} {:>9.4f} {:>9.4f} {:>9.4f}\n", m.label, m.precision, m.recall, m.f1, m.accuracy);
  }
  fmt::print(out, "macro  precision {:.4f} recall {:.4f} f1 {:.4f}\n", report.macro_precision, report.macro_recall,
             report.macro_f1);
  fmt::print(out, "micro  precision {:.4f} recall {:.4f} f1 {:.4f}\n", report.micro_precision, report.micro_recall,
             report.micro_f1);
  fmt::print(out, "top1 {:.4f}\nreport: {}\n", report.top1, dir.string());
  return report;
}

std::vector<CamMap> cmd_explain(const RunConfig& config, std::ostream& out) {
  if (config.explain.images.empty()) throw ConfigError("explain needs at least one image (explain.images or --image)");
  const CamMethod method = parse_method(config.explain.method);
  const auto model = load_model(config);
  const std::string layer = resolve_layer(model, config.explain.layer);
  if (!model.is_conv_layer(layer)) {
    const auto& names = model.layer_names();
    throw ConfigError(fmt::format("unknown layer '{}'; valid layers: last, {}", config.explain.layer,
                                  fmt::join(names.begin(), names.end() - 1, ", ")));
  }
  if (config.explain.target_class && *config.explain.target_class >= model.num_classes()) {
    throw ConfigError(fmt::format("class {} outside [0, {})", *config.explain.target_class, model.num_classes()));
  }

  const std::size_t size = model.config().input_size;
  std::vector<CamMap> maps;
  for (const auto& image : config.explain.images) {
    const auto input = load_image<Real>(image, size);
    auto cam = upsample_cam(explain(model, input, method, config.explain.target_class, layer), size);
    const auto dir = config.output_dir / "explain" /
                     fmt::format("{}_{}_{}", fs::path(image).stem().string(), method_name(method), layer);
    write_cam_csv(cam, dir / "cam_raw.csv");
    write_png(dir / "cam.png", to_image8(render_cam(cam)));
    write_png(dir / "overlay.png", to_image8(overlay(cam, tensor_to_rgb(input), config.explain.alpha)));
    write_png(dir / fmt::format("featuregrid_{}.png", layer), render_feature_grid(feature_grid(model, input, layer)));

    double raw_sum = 0.0;
    for (double v : cam.raw) raw_sum += v;
    const auto& names = model.class_names();
    fmt::print(out, "{}\n  predicted {} (confidence {:.4f})\n", image, names[cam.predicted_class],
               cam.probabilities[cam.predicted_class]);
    fmt::print(out, "  {} for class {} at {} ({}x{})\n", method_name(method), names[cam.target_class], layer,
               cam.height, cam.width);
    fmt::print(out, "  logit {:.9g}  bias {:.9g}  logit-bias {:.9g}  raw_sum {:.9g}\n  artifacts: {}\n", cam.logit,
               cam.bias, cam.logit - cam.bias, raw_sum, dir.string());
    maps.push_back(std::move(cam));
  }
  return maps;
}

void cmd_featmaps(const RunConfig& config, std::ostream& out) {
  if (config.explain.images.empty()) throw ConfigError("featmaps needs at least one image (explain.images or --image)");
  const auto model = load_model(config);
  std::vector<std::string> layers;
  if (config.explain.layer == "all") {
    layers.assign(model.layer_names().begin(), model.layer_names().end() - 1);
  } else {
    layers.push_back(resolve_layer(model, config.explain.layer));
    if (!model.is_conv_layer(layers.back())) {
      const auto& names = model.layer_names();
      throw ConfigError(fmt::format("unknown layer '{}'; valid layers: all, last, {}", config.explain.layer,
                                    fmt::join(names.begin(), names.end() - 1, ", ")));
    }
  }
  for (const auto& image : config.explain.images) {
    const auto input = load_image<Real>(image, model.config().input_size);
    const auto dir = config.output_dir / "featmaps" / fs::path(image).stem();
    for (const auto& layer : layers) {
      const auto grid = feature_grid(model, input, layer);
      const auto path = dir / fmt::format("featuregrid_{}.png", layer);
      write_png(path, render_feature_grid(grid));
      fmt::print(out, "{}: {} channels as {}x{} grid -> {}\n", layer, grid.tiles.size(), grid.rows, grid.cols,
                 path.string());
    }
  }
}

}  // namespace faithcam
