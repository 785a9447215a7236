#pragma once

#include <ostream>
#include <vector>

#include "faithcam/evaluator.hpp"
#include "faithcam/explain.hpp"
#include "faithcam/run_config.hpp"
#include "faithcam/trainer.hpp"

namespace faithcam {

// Each command reads what it needs from the RunConfig, writes its artifacts
// under config.output_dir and prints a short summary to `out`. Failures are
// thrown as faithcam::Error subclasses; ConfigError means bad user input.

// Generates the synthetic shape corpus into config.dataset_root.
void cmd_synth(const RunConfig& config, std::ostream& out);

// manifest.csv (or data.manifest) plus split_counts.csv.
SplitManifest cmd_split(const RunConfig& config, std::ostream& out);

// epoch_log.csv, model.ckpt and periodic checkpoints. With resume, training
// continues from the checkpoint and its epoch numbering.
TrainResult cmd_train(const RunConfig& config, bool resume, std::ostream& out);

// eval_<split>/{metrics.json, confusion.csv, confusion_normalized.csv, confusion.png}.
MetricsReport cmd_eval(const RunConfig& config, std::ostream& out);

// explain/<image>_<method>_<layer>/{cam_raw.csv, cam.png, overlay.png,
// featuregrid_<layer>.png} per configured image.
std::vector<CamMap> cmd_explain(const RunConfig& config, std::ostream& out);

// featmaps/<image>/featuregrid_<layer>.png for the configured layer, or for
// every conv layer when the layer is "all".
void cmd_featmaps(const RunConfig& config, std::ostream& out);

}  // namespace faithcam
