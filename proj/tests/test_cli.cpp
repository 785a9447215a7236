#include <doctest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "faithcam/commands.hpp"
#include "faithcam/dataset.hpp"
#include "faithcam/error.hpp"
#include "support/fixtures.hpp"
#include "support/temp_dir.hpp"

using namespace faithcam;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small but complete pipeline: 16x16 synthetic shapes, two conv blocks.
fs::path write_config(const fs::path& dir, const std::string& extra = "") {
  const auto path = dir / "run.toml";
  std::ofstream(path) << fmt::format(R"(seed = 5
output_dir = "{}"

[data]
root = "{}"
input_size = 16

[model]
channels = [4, 8]

[train]
epochs = 2
batch_size = 4
learning_rate = 0.05

[synth]
per_class = 10
size = 16
{})",
                                     (dir / "run").string(), (dir / "corpus").string(), extra);
  return path;
}

struct Run {
  int code = -1;
  std::string out, err;
};

Run run_cli(const std::string& args, const std::string& env = "") {
  faithcam::testing::TempDir logs;
  const auto out = logs.path() / "out", err = logs.path() / "err";
  const std::string cmd = fmt::format("{} {} {} > '{}' 2> '{}'", env, FAITHCAM_CLI_PATH, args, out.string(), err.string());
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

double csv_sum(const fs::path& path) {
  double total = 0.0;
  for (double v : read_cam_csv(path)) total += v;
  return total;
}

}  // namespace

TEST_CASE("configuration file parsing") {
  faithcam::testing::TempDir dir;
  const auto config = RunConfig::from_file(write_config(dir.path(), R"(
[explain]
images = ["a.png", "b.png"]
class = 2
method = "gradcam"
)"));
  CHECK(config.seed == 5);
  CHECK(config.model.seed == 6);
  CHECK(config.train.seed == 7);
  CHECK(config.synth.seed == 8);
  CHECK(config.model.input_size == 16);
  REQUIRE(config.model.blocks.size() == 2);
  CHECK(config.model.blocks[1].out_channels == 8);
  CHECK(config.train.epochs == 2);
  CHECK(config.train.learning_rate == 0.05);
  CHECK(config.train.momentum == 0.9);
  CHECK(config.explain.images == std::vector<std::string>{"a.png", "b.png"});
  CHECK(config.explain.target_class == std::optional<std::size_t>{2});
  CHECK(config.explain.method == "gradcam");
  CHECK(config.manifest_path() == dir.path() / "run" / "manifest.csv");
  CHECK(config.checkpoint_path() == dir.path() / "run" / "model.ckpt");

  SUBCASE("per-block keys apply after the channel list whatever their order") {
    std::ofstream(dir.path() / "k.toml") << "[model]\nkernel = 5\nchannels = [2, 3, 4]\npool = [true, false, true]\n";
    const auto k = RunConfig::from_file(dir.path() / "k.toml");
    REQUIRE(k.model.blocks.size() == 3);
    for (const auto& b : k.model.blocks) CHECK(b.kernel == 5);
    CHECK_FALSE(k.model.blocks[1].use_pool);
  }
  SUBCASE("errors") {
    std::ofstream(dir.path() / "bad.toml") << "[train]\nepoch = 3\n";
    CHECK_THROWS_WITH_AS(RunConfig::from_file(dir.path() / "bad.toml"), doctest::Contains("train.epoch"), ConfigError);
    std::ofstream(dir.path() / "num.toml") << "[train]\nlearning_rate = \"fast\"\n";
    CHECK_THROWS_AS(RunConfig::from_file(dir.path() / "num.toml"), ConfigError);
    std::ofstream(dir.path() / "neg.toml") << "[train]\nepochs = -1\n";
    CHECK_THROWS_AS(RunConfig::from_file(dir.path() / "neg.toml"), ConfigError);
    RunConfig c;
    CHECK_THROWS_AS(c.set("seed", {"1", "2"}), ConfigError);
    CHECK_THROWS_AS(c.set("model.pool", {"true", "false"}), ConfigError);
  }
  SUBCASE("predicted class") {
    RunConfig c;
    c.set("explain.class", {"3"});
    c.set("explain.class", {"predicted"});
    CHECK_FALSE(c.explain.target_class.has_value());
  }
}

TEST_CASE("the committed example configuration parses to the defaults") {
  const auto example = RunConfig::from_file(fs::path(FAITHCAM_SOURCE_DIR) / "configs" / "example.toml");
  RunConfig defaults;
  defaults.derive_seeds();
  CHECK(example.seed == defaults.seed);
  CHECK(example.model.blocks == ModelConfig::desk_default(2).blocks);
  CHECK(example.model.input_size == defaults.model.input_size);
  CHECK(example.train.epochs == defaults.train.epochs);
  CHECK(example.train.batch_size == defaults.train.batch_size);
  CHECK(example.train.learning_rate == defaults.train.learning_rate);
  CHECK(example.train.momentum == defaults.train.momentum);
  CHECK(example.train.weight_decay == defaults.train.weight_decay);
  CHECK(example.train.seed == defaults.train.seed);
  CHECK(example.eval_split == defaults.eval_split);
  CHECK(example.explain.layer == defaults.explain.layer);
  CHECK(example.explain.method == defaults.explain.method);
  CHECK_FALSE(example.explain.target_class.has_value());
  CHECK(example.synth.per_class == defaults.synth.per_class);
}

TEST_CASE("commands run the pipeline") {
  faithcam::testing::TempDir dir;
  const auto config = RunConfig::from_file(write_config(dir.path()));
  std::ostringstream out;
  cmd_synth(config, out);
  CHECK(out.str().find("wrote 40 images") != std::string::npos);

  const auto manifest = cmd_split(config, out);
  CHECK(manifest.records.size() == 40);
  CHECK(manifest.families() == synthetic_class_names());
  const auto first = slurp(config.manifest_path());
  cmd_split(config, out);
  CHECK(slurp(config.manifest_path()) == first);
  CHECK(slurp(config.output_dir / "split_counts.csv").find("Total,28,4,8,40") != std::string::npos);

  const auto trained = cmd_train(config, false, out);
  CHECK(trained.logs.size() == 2);
  CHECK(out.str().find("final top1") != std::string::npos);

  SUBCASE("eval") {
    const auto report = cmd_eval(config, out);
    CHECK(report.total == 8);
    const auto stored = read_report(config.output_dir / "eval_test" / "metrics.json");
    CHECK(stored == report);
    for (const auto& m : stored.per_class) {
      const double f1 = m.precision + m.recall > 0 ? 2 * m.precision * m.recall / (m.precision + m.recall) : 0.0;
      CHECK(std::abs(m.f1 - f1) <= 1e-12);
    }
    auto other = config;
    other.eval_split = "holdout";
    CHECK_THROWS_AS(cmd_eval(other, out), ConfigError);
    other.eval_split = "val";
    CHECK(cmd_eval(other, out).total == 4);
    CHECK(fs::exists(config.output_dir / "eval_val" / "confusion.png"));
  }

  SUBCASE("resume continues the epoch numbering") {
    const auto resumed = cmd_train(config, true, out);
    CHECK(resumed.logs.front().epoch == 3);
    CHECK(read_epoch_log(config.output_dir / "epoch_log.csv").size() == 4);
  }

  SUBCASE("explain") {
    const auto image = manifest.select(Split::test).front().path;
    auto c = config;
    c.explain.images = {image};
    c.explain.layer = "last";
    std::ostringstream text;
    const auto h = cmd_explain(c, text).front();
    const auto dir_h = config.output_dir / "explain" / fmt::format("{}_hirescam_conv2", fs::path(image).stem().string());
    for (const char* f : {"cam_raw.csv", "cam.png", "overlay.png", "featuregrid_conv2.png"}) CHECK(fs::exists(dir_h / f));
    CHECK(std::abs(csv_sum(dir_h / "cam_raw.csv") - (h.logit - h.bias)) <= 1e-4 * std::max(1.0, std::abs(h.logit - h.bias)));
    CHECK(text.str().find("predicted " + synthetic_class_names()[h.predicted_class]) != std::string::npos);

    // The explained class is the one eval would predict.
    const auto model = load_checkpoint<Real>(config.checkpoint_path());
    const auto chw = load_image<Real>(image, 16);
    const Tensor<Real> batch(Shape{1, 3, 16, 16}, std::vector<Real>(chw.data().begin(), chw.data().end()));
    const auto logits = model.predict(batch).logits;
    CHECK(argmax_rows(logits).front() == h.predicted_class);
    CHECK(h.target_class == h.predicted_class);

    c.explain.method = "gradcam";
    c.explain.layer = "conv1";
    const auto g = cmd_explain(c, text).front();
    const auto dir_g = config.output_dir / "explain" / fmt::format("{}_gradcam_conv1", fs::path(image).stem().string());
    CHECK(fs::exists(dir_g / "cam_raw.csv"));
    CHECK(g.layer == "conv1");

    c.explain.method = "occlusion";
    CHECK_THROWS_WITH_AS(cmd_explain(c, text), doctest::Contains("hirescam, gradcam"), ConfigError);
    c.explain.method = "hirescam";
    c.explain.layer = "conv5";
    CHECK_THROWS_WITH_AS(cmd_explain(c, text), doctest::Contains("conv1, conv2"), ConfigError);
    c.explain.layer = "last";
    c.explain.target_class = 9;
    CHECK_THROWS_AS(cmd_explain(c, text), ConfigError);
    c.explain.images.clear();
    CHECK_THROWS_AS(cmd_explain(c, text), ConfigError);
  }

  SUBCASE("featmaps") {
    auto c = config;
    c.explain.images = {manifest.records.front().path};
    c.explain.layer = "all";
    cmd_featmaps(c, out);
    const auto dir_f = config.output_dir / "featmaps" / fs::path(c.explain.images[0]).stem();
    CHECK(fs::exists(dir_f / "featuregrid_conv1.png"));
    CHECK(fs::exists(dir_f / "featuregrid_conv2.png"));
    c.explain.layer = "head";
    CHECK_THROWS_AS(cmd_featmaps(c, out), ConfigError);
  }

  SUBCASE("label map mismatch") {
    auto c = config;
    c.dataset_root = dir.path() / "other";
    for (const char* family : {"alpha", "beta"}) {
      fs::create_directories(c.dataset_root / family);
      for (int i = 0; i < 8; ++i) {
        faithcam::testing::write_gray_png(c.dataset_root / family / fmt::format("{}.png", i), 4, 4,
                                          std::vector<std::uint8_t>(16, static_cast<std::uint8_t>(i * 20)));
      }
    }
    c.manifest = dir.path() / "other.csv";
    cmd_split(c, out);
    CHECK_THROWS_WITH_AS(cmd_eval(c, out), doctest::Contains("label map mismatch"), ValueError);
  }
}

TEST_CASE("a memorized run scores perfectly on its training split") {
  faithcam::testing::TempDir dir;
  auto config = RunConfig::from_file(write_config(dir.path()));
  for (const auto& [family, level] : {std::pair{"dark", 10}, std::pair{"light", 240}}) {
    fs::create_directories(config.dataset_root / family);
    for (int i = 0; i < 7; ++i) {
      faithcam::testing::write_gray_png(config.dataset_root / family / fmt::format("{}.png", i), 16, 16,
                                        std::vector<std::uint8_t>(256, static_cast<std::uint8_t>(level + i)));
    }
  }
  config.train.epochs = 30;
  config.eval_split = "train";
  std::ostringstream out;
  cmd_split(config, out);
  cmd_train(config, false, out);
  const auto report = cmd_eval(config, out);
  CHECK(report.total == 8);
  CHECK(report.top1 == 1.0);
  CHECK(report.macro_f1 == 1.0);
  for (const auto& m : report.per_class) {
    CHECK(m.precision == 1.0);
    CHECK(m.recall == 1.0);
    CHECK(m.accuracy == 1.0);
  }
}

TEST_CASE("pipeline artifacts are byte-identical across runs") {
  faithcam::testing::TempDir dir;
  auto config = RunConfig::from_file(write_config(dir.path()));
  std::ostringstream out;
  cmd_synth(config, out);
  std::vector<std::string> artifacts;
  for (const char* name : {"a", "b"}) {
    auto c = config;
    c.output_dir = dir.path() / name;
    cmd_split(c, out);
    cmd_train(c, false, out);
    cmd_eval(c, out);
    artifacts.push_back(slurp(c.output_dir / "manifest.csv") + slurp(c.output_dir / "epoch_log.csv") +
                        slurp(c.output_dir / "eval_test" / "metrics.json") +
                        slurp(c.output_dir / "eval_test" / "confusion.csv") + slurp(c.output_dir / "model.ckpt"));
  }
  CHECK(artifacts[0].size() > 100);
  CHECK(artifacts[0] == artifacts[1]);
}

TEST_CASE("command-line exit codes and overrides") {
  faithcam::testing::TempDir dir;
  const auto cfg = write_config(dir.path());
  const std::string c = "-c '" + cfg.string() + "'";

  CHECK(run_cli("--help").code == 0);
  CHECK(run_cli("").code == 1);
  CHECK(run_cli("frobnicate").code == 1);
  CHECK(run_cli("train --epochs many").code == 1);
  CHECK(run_cli("-c /nonexistent.toml split").code == 1);

  std::ofstream(dir.path() / "typo.toml") << "[trian]\nepochs = 1\n";
  const auto typo = run_cli("-c '" + (dir.path() / "typo.toml").string() + "' split");
  CHECK(typo.code == 1);
  CHECK(typo.err.find("trian.epochs") != std::string::npos);

  const auto missing = run_cli(c + " --data '" + (dir.path() / "nowhere").string() + "' split");
  CHECK(missing.code == 2);
  CHECK(missing.err.find("nowhere") != std::string::npos);

  CHECK(run_cli(c + " synth").code == 0);
  const auto split = run_cli(c + " split");
  CHECK(split.code == 0);
  CHECK(split.out.find("Total") != std::string::npos);

  // The environment variable moves the output directory; a flag beats it.
  const auto env_dir = dir.path() / "from_env";
  const std::string env = "FAITHCAM_OUTPUT_DIR='" + env_dir.string() + "'";
  const std::string bare = "--data '" + (dir.path() / "corpus").string() + "'";
  CHECK(run_cli(bare + " split", env).code == 0);
  CHECK(fs::exists(env_dir / "manifest.csv"));
  const auto flag_dir = dir.path() / "from_flag";
  CHECK(run_cli(bare + " -o '" + flag_dir.string() + "' split", env).code == 0);
  CHECK(fs::exists(flag_dir / "manifest.csv"));

  const auto eval_missing = run_cli(c + " eval");
  CHECK(eval_missing.code == 2);
  CHECK(eval_missing.err.find("checkpoint") != std::string::npos);

  const auto trained = run_cli(c + " train --epochs 1");
  CHECK(trained.code == 0);
  CHECK(trained.out.find("final top1") != std::string::npos);
  CHECK(run_cli(c + " eval --split holdout").code == 1);
  CHECK(run_cli(c + " eval --split val").code == 0);
  CHECK(run_cli(c + " train --epochs 1 --resume").out.find("epoch    2") != std::string::npos);
  CHECK(run_cli(c + " explain --method lime --image x.png").code == 1);
  const auto image = (dir.path() / "corpus" / "circle" / "circle_0000.png").string();
  const auto explained = run_cli(c + " explain --image '" + image + "'");
  CHECK(explained.code == 0);
  CHECK(explained.out.find("confidence") != std::string::npos);
  CHECK(run_cli(c + " explain --image '" + image + "' --layer conv7").code == 1);
  CHECK(run_cli(c + " explain --image '" + (dir.path() / "none.png").string() + "'").code == 2);
  CHECK(run_cli(c + " featmaps --layer all --image '" + image + "'").code == 0);
}
