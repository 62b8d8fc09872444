// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/cli.h"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "omni/checkpoint.h"
#include "omni/duplex.h"
#include "omni/tasks.h"

namespace omni {
namespace {

namespace fs = std::filesystem;

struct CliResult {
  int code;
  std::string out;
  std::string err;
};

CliResult run(std::initializer_list<std::string> args) {
  std::vector<std::string> storage{"omni"};
  storage.insert(storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& s : storage) argv.push_back(s.c_str());
  std::ostringstream out, err;
  const int code = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::path(::testing::TempDir()) /
           ("omni_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    unsetenv("OMNI_SEED");
  }
  void TearDown() override {
    unsetenv("OMNI_SEED");
    fs::remove_all(dir_);
  }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }

  fs::path dir_;
};

TEST_F(CliTest, DataGenIsReproducible) {
  ASSERT_EQ(run({"data-gen", "--task", "asr", "--size", "20", "--seed", "5", "--out", path("a")}).code, 0);
  ASSERT_EQ(run({"data-gen", "--task", "asr", "--size", "20", "--seed", "5", "--out", path("b")}).code, 0);
  ASSERT_EQ(run({"data-gen", "--task", "asr", "--size", "20", "--seed", "6", "--out", path("c")}).code, 0);
  EXPECT_EQ(slurp(path("a")), slurp(path("b")));
  EXPECT_NE(slurp(path("a")), slurp(path("c")));
  const Dataset d = load_dataset(path("a"));
  EXPECT_EQ(d.samples.size(), 20u);
  for (const auto& s : d.samples) {
    EXPECT_EQ(s.target, expected_target(d.layout, s.input, d.options));
  }
}

TEST_F(CliTest, SeedComesFromTheEnvironment) {
  ASSERT_EQ(run({"data-gen", "--task", "text_qa", "--size", "5", "--seed", "17", "--out", path("a")}).code, 0);
  setenv("OMNI_SEED", "17", 1);
  ASSERT_EQ(run({"data-gen", "--task", "text_qa", "--size", "5", "--out", path("b")}).code, 0);
  ASSERT_EQ(run({"data-gen", "--task", "text_qa", "--size", "5", "--seed", "3", "--out", path("c")}).code, 0);
  EXPECT_EQ(slurp(path("a")), slurp(path("b")));
  EXPECT_NE(slurp(path("a")), slurp(path("c")));
  setenv("OMNI_SEED", "x", 1);
  EXPECT_EQ(run({"data-gen", "--task", "text_qa", "--size", "5", "--out", path("d")}).code, 2);
}

TEST_F(CliTest, TrainInspectEvalGenerate) {
  const CliResult t = run({"train", "--stage", "1", "--steps", "2", "--batch", "2", "--seed", "1",
                           "--log-every", "1", "--out", path("ck1")});
  ASSERT_EQ(t.code, 0) << t.err;
  EXPECT_NE(t.out.find("step 1 loss"), std::string::npos);
  EXPECT_TRUE(fs::exists(path("ck1")));
  const auto record = nlohmann::json::parse(slurp(path("ck1") + ".run.json"));
  EXPECT_EQ(record.at("losses").size(), 2u);
  EXPECT_TRUE(record.at("frozen_unchanged").get<bool>());

  const CliResult i = run({"inspect", "--checkpoint", path("ck1")});
  ASSERT_EQ(i.code, 0) << i.err;
  const auto header = nlohmann::json::parse(i.out);
  EXPECT_EQ(header.at("stage"), 1);
  EXPECT_EQ(header.at("lineage").size(), 2u);
  EXPECT_TRUE(header.contains("config"));
  EXPECT_GT(header.at("parameter_counts").at("adapters").get<int64_t>(), 0);

  const CliResult e = run({"eval", "--checkpoint", path("ck1"), "--task", "asr", "--size", "2",
                           "--seed", "9"});
  ASSERT_EQ(e.code, 0) << e.err;
  const auto metrics = nlohmann::json::parse(e.out);
  EXPECT_EQ(metrics.at("asr").at("samples"), 2);
  EXPECT_TRUE(metrics.at("asr").contains("sequence_exact_match"));

  ASSERT_EQ(run({"data-gen", "--task", "audio_qa_audio_out", "--size", "2", "--out", path("q")}).code, 0);
  const CliResult g = run({"generate", "--checkpoint", path("ck1"), "--prefix", path("q"),
                           "--max-steps", "6"});
  ASSERT_EQ(g.code, 0) << g.err;
  std::istringstream lines(g.out);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    EXPECT_EQ(j.at("rows").size(), 8u);
    ++n;
  }
  EXPECT_EQ(n, 2);
  EXPECT_EQ(run({"generate", "--checkpoint", path("ck1"), "--prefix", path("q"), "--max-steps",
                 "6", "--batch-parallel"}).code, 0);

  // Stage 2 only continues from stage 1.
  EXPECT_EQ(run({"train", "--stage", "3", "--init", path("ck1"), "--steps", "1", "--out",
                 path("ck3")}).code, 2);
  EXPECT_EQ(run({"train", "--stage", "2", "--steps", "1", "--out", path("ck2")}).code, 2);
}

TEST_F(CliTest, DuplexWithTheStub) {
  const VocabLayout layout = desk_layout();
  const auto samples = build_interrupt_dataset(3, 4, 2.0, stop_phrase_generator(layout),
                                               background_noise_generator(layout));
  {
    std::ofstream f(path("s"));
    for (const auto& s : samples) f << interrupt_sample_to_json_line(s) << '\n';
  }
  const CliResult d = run({"duplex", "--stream", path("s"), "--stub", "--seed", "2"});
  ASSERT_EQ(d.code, 0) << d.err;
  std::istringstream lines(d.out);
  std::string line;
  size_t n = 0;
  while (std::getline(lines, line)) {
    const auto j = nlohmann::json::parse(line);
    const auto& s = samples[n];
    if (!j.at("stop_step").is_null()) {
      EXPECT_EQ(j.at("stop_step").get<int>(), s.marker_span.end);
      EXPECT_EQ(j.at("columns_emitted").get<int>(), s.marker_span.end);
    }
    ++n;
  }
  EXPECT_EQ(n, samples.size());
  EXPECT_EQ(run({"duplex", "--stream", path("s")}).code, 2);
}

TEST_F(CliTest, ExitCodes) {
  EXPECT_EQ(run({}).code, 1);
  EXPECT_EQ(run({"frobnicate"}).code, 1);
  EXPECT_EQ(run({"data-gen", "--out", path("x")}).code, 1);
  EXPECT_EQ(run({"data-gen", "--task", "asr", "--out", path("x"), "--bogus"}).code, 1);
  EXPECT_EQ(run({"train", "--stage", "4", "--out", path("x")}).code, 1);
  EXPECT_EQ(run({"inspect", "--checkpoint", path("missing")}).code, 2);
  EXPECT_EQ(run({"data-gen", "--task", "poetry", "--out", path("x")}).code, 2);
  const CliResult help = run({"--help"});
  EXPECT_EQ(help.code, 0);
  EXPECT_NE(help.out.find("data-gen"), std::string::npos);
  const CliResult sub_help = run({"eval", "--help"});
  EXPECT_EQ(sub_help.code, 0);
  EXPECT_NE(sub_help.out.find("50"), std::string::npos);
}

}  // namespace
}  // namespace omni
