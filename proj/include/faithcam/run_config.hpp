#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "faithcam/model.hpp"
#include "faithcam/synthetic.hpp"
#include "faithcam/trainer.hpp"

namespace faithcam {

struct ExplainSettings {
  std::vector<std::string> images;
  std::string layer = "last";  // "last", "all" (featmaps only) or a layer name
  std::string method = "hirescam";
  std::optional<std::size_t> target_class;  // empty: explain the predicted class
  double alpha = 0.5;
};

// Everything one pipeline run needs. Loaded from a TOML-style file, then
// overridden by command-line flags. All seeded components derive their seed
// from `seed`: split uses seed, model init seed + 1, batch shuffling
// seed + 2, the synthetic corpus seed + 3.
struct RunConfig {
  std::uint64_t seed = 42;
  std::filesystem::path dataset_root;
  std::filesystem::path output_dir = "runs/default";
  std::filesystem::path manifest;    // default: <output_dir>/manifest.csv
  std::filesystem::path checkpoint;  // default: <output_dir>/model.ckpt
  std::string eval_split = "test";
  ModelConfig model = ModelConfig::desk_default(2);
  Hyperparams train;
  ExplainSettings explain;
  SyntheticOptions synth;

  std::filesystem::path manifest_path() const;
  std::filesystem::path checkpoint_path() const;

  // Applies one "section.key" setting; values holds one entry per array
  // element. Throws ConfigError on unknown keys or unparsable values.
  void set(const std::string& key, const std::vector<std::string>& values);

  // Recomputes per-component seeds from `seed`.
  void derive_seeds();

  static RunConfig from_file(const std::filesystem::path& path);
};

}  // namespace faithcam
