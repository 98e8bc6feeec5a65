#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include "divseg/checkpoint.hpp"

namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("divseg_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

int run(const std::string& args) {
  const std::string cmd = std::string(DIVSEG_CLI) + " --log-level error " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

const std::string kData = "--seed 4 --n-train 40 --n-test 6";
const std::string kLoc = "--seed 4 --loc-epochs 1";

}  // namespace

TEST(Cli, UsageErrorsExitWithConfigCode) {
  EXPECT_EQ(run("run --no-such-flag"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  const fs::path d = scratch("bad_strategy");
  EXPECT_EQ(run("run --strategy random --out " + d.string()), 2);
  // Rejected before any work happened.
  EXPECT_FALSE(fs::exists(d / "data"));
}

TEST(Cli, MissingInputExitsWithIoCode) {
  const fs::path d = scratch("missing");
  EXPECT_EQ(run("eval --model " + (d / "nope").string() + " --data " + (d / "nada").string() +
                " --out " + (d / "r.json").string()),
            5);
}

TEST(Cli, MalformedPointsExitWithDataCode) {
  const fs::path d = scratch("bad_points");
  ASSERT_EQ(run("gen-data --n-train 8 --n-test 2 --out " + (d / "data").string()), 0);
  std::ofstream(d / "p.jsonl") << "{\"image\": 0, \"loc\": \"x\"}\n";
  EXPECT_EQ(run("train-seg --points " + (d / "p.jsonl").string() + " --data " +
                (d / "data").string() + " --out " + (d / "seg").string()),
            3);
}

TEST(Cli, StepwiseMatchesEndToEnd) {
  const fs::path d = scratch("stepwise");
  ASSERT_EQ(run("run " + kData + " --loc-epochs 1 --seg-epochs 1 --out " + (d / "run").string()),
            0);
  ASSERT_EQ(run("gen-data " + kData + " --out " + (d / "data").string()), 0);
  ASSERT_EQ(run("train-loc " + kLoc + " --data " + (d / "data").string() + " --out " +
                (d / "loc").string()),
            0);
  ASSERT_EQ(run("sample --seed 4 --in " + (d / "loc").string() + " --data " +
                (d / "data").string() + " --out " + (d / "points.jsonl").string()),
            0);
  EXPECT_EQ(divseg::read_points(d / "points.jsonl"), divseg::read_points(d / "run" / "points.jsonl"));

  ASSERT_EQ(run("eval --model " + (d / "run" / "segmenter").string() + " --data " +
                (d / "run" / "data").string() + " --out " + (d / "eval.json").string()),
            0);
  const auto report = divseg::read_json_file(d / "eval.json");
  EXPECT_EQ(report.at("miou"), divseg::read_json_file(d / "run" / "report.json").at("miou"));

  ASSERT_EQ(run("render heatmap --data " + (d / "data").string() + " --image 0 --localizer " +
                (d / "loc" / "class_0").string() + " --out " + (d / "h.pgm").string()),
            0);
  std::ifstream pgm(d / "h.pgm", std::ios::binary);
  std::string magic;
  pgm >> magic;
  EXPECT_EQ(magic, "P5");
}

TEST(Cli, FlagsOverrideConfigFile) {
  const fs::path d = scratch("override");
  std::ofstream(d / "c.json") << R"({"seed": 3, "data": {"n_train": 12, "n_test": 3, "classes": 2}})";
  ASSERT_EQ(run("--config " + (d / "c.json").string() + " gen-data --n-train 9 --out " +
                (d / "data").string()),
            0);
  const auto cfg = divseg::read_json_file(d / "data" / "config.json");
  EXPECT_EQ(cfg.at("data").at("n_train"), 9);
  EXPECT_EQ(cfg.at("data").at("n_test"), 3);
  EXPECT_EQ(cfg.at("data").at("classes"), 2);
  EXPECT_EQ(cfg.at("seed"), 3);
}

TEST(Cli, GradcheckPasses) { EXPECT_EQ(run("gradcheck --instances 3"), 0); }
