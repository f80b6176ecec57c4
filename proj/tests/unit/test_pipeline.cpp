#include "advgen/error.hpp"
#include "advgen/pipeline.hpp"
#include "test_util.hpp"

#include <gtest/gtest.h>

#include <sstream>

using namespace advgen;
namespace pl = advgen::pipeline;
using nlohmann::json;

namespace {

struct Row {
  const char* name;
  double lambda1, lambda2, epsilon, epsilon_attack, alpha;
  std::int64_t steps;
  bool targeted;
};

// Reference hyperparameter rows, transcribed independently of the preset code.
const Row kRows[] = {
    {"mnist-madry-targeted", 50, 0, 0.1, 0, 1, 500, true},
    {"mnist-madry-targeted-noise", 50, 0, 0.1, 0.3, 1, 500, true},
    {"mnist-raghunathan-untargeted", 100, 0, 0.1, 0, 10, 100, false},
    {"mnist-kolter-untargeted", 100, 0, 0.1, 0, 1, 100, false},
    {"svhn-resnet-targeted", 100, 100, 0.01, 0, 0.1, 200, true},
    {"svhn-resnet-targeted-noise", 100, 100, 0.01, 0.03, 0.5, 300, true},
    {"celeba-target-male", 100, 100, 0.001, 0, 1, 200, true},
    {"celeba-target-male-noise", 100, 100, 0.001, 0.03, 1, 200, true},
    {"celeba-target-female", 100, 100, 0.1, 0, 0.1, 200, true},
    {"celeba-target-female-noise", 100, 100, 0.1, 0.03, 0.1, 200, true},
};

std::string cli() { return ADVGEN_CLI_PATH; }

/// Runs the CLI with stdout captured into `<dir>/stdout.txt`.
int run_cli(const std::string& args, const test::TempDir& dir, std::string* out = nullptr) {
  const auto capture = dir / "stdout.txt";
  const int code = test::run_command(cli() + " " + args + " > " + capture.string() + " 2> " +
                                     (dir / "stderr.txt").string());
  if (out) *out = test::read_file(capture);
  return code;
}

json toy_config() {
  return json::parse(R"({
    "seed": 3,
    "data": {"name": "synthetic", "synthetic": {"class_count": 2, "height": 8, "width": 8, "channels": 1, "per_class": 20}},
    "gan": {"latent_dim": 4, "train": {"total_steps": 20, "batch_size": 16}},
    "classifier": {"spec": {"arch": "mlp"}, "train": {"steps": 20}},
    "attack": {"preset": "toy-targeted", "per_cell": 4}
  })");
}

}  // namespace

TEST(Presets, ReferenceRows) {
  ASSERT_GE(pl::presets().size(), 10u);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& row = kRows[i];
    const auto& p = pl::presets()[i];
    SCOPED_TRACE(row.name);
    EXPECT_EQ(p.name, row.name);
    EXPECT_EQ(p.config.lambda1, row.lambda1);
    EXPECT_EQ(p.config.lambda2, row.lambda2);
    EXPECT_EQ(p.config.epsilon, row.epsilon);
    EXPECT_EQ(p.config.epsilon_attack, row.epsilon_attack);
    EXPECT_EQ(p.config.alpha, row.alpha);
    EXPECT_EQ(p.config.steps, row.steps);
    EXPECT_EQ(p.targeted, row.targeted);
    EXPECT_EQ(p.noise, row.epsilon_attack > 0);
  }
  EXPECT_EQ(pl::find_preset("celeba-target-male").config.y_target, 1);
  EXPECT_EQ(pl::find_preset("celeba-target-female").config.y_target, 0);
  EXPECT_THROW(pl::find_preset("nope"), ValidationError);
}

TEST(Config, StrictParsing) {
  auto j = toy_config();
  const auto c = pl::RunConfig::parse(j);
  EXPECT_EQ(c.seed, 3u);
  EXPECT_EQ(c.data.synthetic.class_count, 2);
  EXPECT_EQ(c.data.synthetic.seed, 3u);
  EXPECT_EQ(c.attack.config.seed, 3u);
  EXPECT_EQ(c.attack.preset, "toy-targeted");
  EXPECT_EQ(c.attack.per_cell, 4);
  EXPECT_EQ(c.hash(), pl::RunConfig::parse(j).hash());

  for (const auto& pointer : {"/bogus", "/data/bogus", "/data/synthetic/bogus", "/gan/train/bogus",
                              "/classifier/spec/bogus", "/attack/bogus", "/attack/config/bogus"}) {
    auto bad = j;
    bad[json::json_pointer(pointer)] = 1;
    EXPECT_THROW(pl::RunConfig::parse(bad), ValidationError) << pointer;
  }
  auto wrong_type = j;
  wrong_type["seed"] = "three";
  EXPECT_THROW(pl::RunConfig::parse(wrong_type), ValidationError);
  auto unknown_preset = j;
  unknown_preset["attack"]["preset"] = "mnist-nope";
  EXPECT_THROW(pl::RunConfig::parse(unknown_preset), ValidationError);
}

TEST(Config, AttackOverridesMergeOntoPreset) {
  auto j = toy_config();
  j["attack"]["config"] = {{"alpha", 0.05}, {"y_target", nullptr}};
  j["attack"]["targeted"] = false;
  const auto c = pl::RunConfig::parse(j);
  EXPECT_EQ(c.attack.config.alpha, 0.05);
  EXPECT_EQ(c.attack.config.lambda1, pl::find_preset("toy-targeted").config.lambda1);
  EXPECT_FALSE(c.attack.config.y_target);
  EXPECT_FALSE(c.attack.targeted);
  j["attack"]["config"] = {{"y_target", 1}};
  EXPECT_EQ(pl::RunConfig::parse(j).attack.config.y_target, 1);
}

TEST(Bound, CheckOutput) {
  pl::BoundCheckOptions o;
  o.instance.n = 100;
  o.instance.m = 4;
  o.instance.epsilon = 0.1;
  std::ostringstream os;
  EXPECT_EQ(pl::bound_check(o, os), 0);
  EXPECT_EQ(os.str(), "bound 0.592139\n");
}

TEST(Cli, BoundCheckAndErrors) {
  test::TempDir dir;
  std::string out;
  EXPECT_EQ(run_cli("bound check --n 100 --m 4 --eps 0.1 --K 1 --delta 0.05", dir, &out), 0);
  EXPECT_EQ(out, "bound 0.592139\n");
  EXPECT_EQ(run_cli("bound check --n 20 --m 4 --eps 0.1 --K 1 --delta 0.05 --trials 10 --seed 1 --out " + (dir / "mc").string(), dir, &out), 0);
  EXPECT_NE(out.find("violations 0"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "mc" / "bound_report.json"));
  EXPECT_EQ(run_cli("bound check --n 0", dir), 2);
  EXPECT_EQ(run_cli("no-such-command", dir), 2);

  test::write_file(dir / "bad.json", R"({"seed": 1, "colour": "red"})");
  EXPECT_EQ(run_cli("data prepare --config " + (dir / "bad.json").string() + " --out " + (dir / "d").string(), dir), 2);
  EXPECT_NE(test::read_file(dir / "stderr.txt").find("colour"), std::string::npos);
  test::write_file(dir / "ok.json", toy_config().dump());
  EXPECT_EQ(run_cli("gan train --config " + (dir / "ok.json").string() + " --data " + (dir / "missing").string() +
                       " --out " + (dir / "g").string(),
                   dir),
            2);
}

TEST(Cli, PresetListingAndDryRun) {
  test::TempDir dir;
  std::string out;
  ASSERT_EQ(run_cli("attack run --list-presets", dir, &out), 0);
  for (const auto& row : kRows) EXPECT_NE(out.find(std::string(row.name) + " "), std::string::npos) << row.name;
  test::write_file(dir / "ok.json", toy_config().dump());
  ASSERT_EQ(run_cli("attack run --dry-run --config " + (dir / "ok.json").string() + " --preset mnist-madry-targeted",
                   dir, &out),
            0);
  const auto resolved = json::parse(out);
  EXPECT_EQ(resolved.at("preset"), "mnist-madry-targeted");
  EXPECT_EQ(resolved.at("lambda1"), 50.0);
  EXPECT_EQ(resolved.at("steps"), 500);
  EXPECT_EQ(resolved.at("per_cell"), 4);
}

TEST(Cli, ReproducibleStagesAndExhaustion) {
  test::TempDir dir;
  const auto cfg = dir / "toy.json";
  test::write_file(cfg, toy_config().dump());
  const auto c = " --config " + cfg.string();
  for (const char* d : {"data1", "data2"}) {
    ASSERT_EQ(run_cli("data prepare" + c + " --out " + (dir / d).string(), dir), 0);
  }
  for (const char* f : {"manifest.json", "train.bin", "test.bin"}) {
    EXPECT_TRUE(test::read_file(dir / "data1" / f) == test::read_file(dir / "data2" / f)) << f;
  }
  const auto data = " --data " + (dir / "data1").string();
  for (const char* d : {"gan1", "gan2"}) {
    ASSERT_EQ(run_cli("gan train" + c + data + " --out " + (dir / d).string(), dir), 0);
  }
  EXPECT_EQ(test::read_file(dir / "gan1" / "manifest.json"), test::read_file(dir / "gan2" / "manifest.json"));
  EXPECT_TRUE(test::read_file(dir / "gan1" / "gan.ckpt") == test::read_file(dir / "gan2" / "gan.ckpt"));
  const auto manifest = json::parse(test::read_file(dir / "gan1" / "manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 3);
  ASSERT_EQ(run_cli("clf train" + c + data + " --out " + (dir / "clf").string(), dir), 0);

  const auto models = " --gan " + (dir / "gan1" / "gan.ckpt").string() + " --classifier " +
                      (dir / "clf" / "classifier.ckpt").string();
  // One zero-length step per attempt: only anchors already classified as the target succeed.
  auto starved = toy_config();
  starved["attack"]["config"] = {{"alpha", 0.0}, {"steps", 1}, {"max_restarts", 1}};
  test::write_file(dir / "starved.json", starved.dump());
  EXPECT_EQ(run_cli("attack run --config " + (dir / "starved.json").string() + models + " --out " +
                       (dir / "starved").string(),
                   dir),
            3);
  std::int64_t exhausted = 0;
  std::istringstream lines(test::read_file(dir / "starved" / "results.jsonl"));
  for (std::string line; std::getline(lines, line);) {
    if (json::parse(line).at("status") == "budget_exhausted") ++exhausted;
  }
  EXPECT_GT(exhausted, 0);
}
