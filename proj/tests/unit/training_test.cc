// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/training.h"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "omni/error.h"

namespace omni {
namespace {

ModelConfig small_config() {
  ModelConfig c = desk_model_config();
  c.d_model = 32;
  c.n_trunk_layers = 1;
  c.n_attn_heads = 2;
  c.vision_feature_width = 8;
  c.audio_feature_width = 8;
  c.adapter_hidden = 16;
  c.context_length = 128;
  return c;
}

StageConfig quick(int stage, int steps) {
  StageConfig c = default_stage_configs(Scale::kDesk)[static_cast<size_t>(stage - 1)];
  c.steps = steps;
  c.batch_size = 2;
  c.warmup_steps = 2;
  return c;
}

TEST(StageConfigTest, PaperScaleQuotesTheHyperparameters) {
  const auto s = default_stage_configs(Scale::kPaper);
  EXPECT_EQ(s[0].lr_min, 2e-5);
  EXPECT_EQ(s[0].lr_max, 1e-3);
  EXPECT_EQ(s[1].lr_min, 2e-6);
  EXPECT_EQ(s[1].lr_max, 2e-4);
  EXPECT_EQ(s[2].lr_min, 2e-6);
  EXPECT_EQ(s[2].lr_max, 2e-5);
  for (const auto& c : s) {
    EXPECT_EQ(c.warmup_steps, 1500);
    EXPECT_EQ(c.batch_size, 192);
    EXPECT_EQ(c.lr_scale, 1.0);
    EXPECT_NO_THROW(c.validate());
  }
}

TEST(StageConfigTest, DeskScaleKeepsRanges) {
  const auto d = default_stage_configs("desk");
  const auto p = default_stage_configs("paper");
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(d[i].lr_min, p[i].lr_min);
    EXPECT_EQ(d[i].lr_max, p[i].lr_max);
    EXPECT_EQ(d[i].warmup_steps, 50);
    EXPECT_EQ(d[i].batch_size, i == 0 ? 16 : 32);
    EXPECT_EQ(d[i].steps, 2000);
    EXPECT_EQ(d[i].trainable_groups, p[i].trainable_groups);
  }
  EXPECT_THROW(default_stage_configs("laptop"), InvalidArgument);
}

TEST(StageConfigTest, FreezingRules) {
  for (Scale scale : {Scale::kDesk, Scale::kPaper}) {
    const auto s = default_stage_configs(scale);
    EXPECT_EQ(s[0].trainable_groups, GroupMask{ParamGroup::kAdapters});
    EXPECT_FALSE(s[1].trainable_groups.contains(ParamGroup::kAdapters));
    EXPECT_TRUE(s[1].trainable_groups.contains(ParamGroup::kTrunk));
    EXPECT_EQ(s[2].trainable_groups, GroupMask::all());
  }
  StageConfig bad = default_stage_configs(Scale::kDesk)[0];
  bad.trainable_groups = GroupMask::all();
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = default_stage_configs(Scale::kDesk)[1];
  bad.trainable_groups = {ParamGroup::kAdapters, ParamGroup::kTrunk};
  EXPECT_THROW(bad.validate(), InvalidArgument);
  bad = default_stage_configs(Scale::kDesk)[2];
  bad.task_mix = {{TaskKind::kAsr, 1.0}, {TaskKind::kAudioQaAudioOut, 0.0}};
  EXPECT_THROW(bad.validate(), InvalidArgument);
}

TEST(ScheduleTest, WarmupThenCosine) {
  StageConfig c = default_stage_configs(Scale::kDesk)[1];
  c.steps = 300;
  c.warmup_steps = 50;
  const double peak = c.lr_max * c.lr_scale;
  const double floor = c.lr_min * c.lr_scale;
  for (int t = 0; t < c.steps; ++t) {
    double want;
    if (t < 50) {
      want = peak * (t + 1) / 50.0;
    } else {
      want = floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * (t - 50) / 249.0));
    }
    EXPECT_NEAR(learning_rate(c, t), want, 1e-15) << t;
    if (t > 0 && t < 50) EXPECT_GT(learning_rate(c, t), learning_rate(c, t - 1));
    if (t > 50) EXPECT_LE(learning_rate(c, t), learning_rate(c, t - 1));
  }
  EXPECT_NEAR(learning_rate(c, 49), peak, 1e-15);
  EXPECT_NEAR(learning_rate(c, 299), floor, 1e-15);
}

TEST(RunStageTest, StageOneOnlyMovesAdapters) {
  Model m(small_config(), 1);
  const Model before(m.config(), m.params());
  const RunRecord r = run_stage(quick(1, 3), m, {});
  EXPECT_TRUE(r.frozen_unchanged);
  EXPECT_EQ(r.losses.size(), 3u);
  const auto a = before.params().tensors();
  const auto b = m.params().tensors();
  bool adapters_moved = false;
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].group == ParamGroup::kAdapters) {
      adapters_moved |= *a[i].value != *b[i].value;
    } else {
      EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
    }
  }
  EXPECT_TRUE(adapters_moved);
}

TEST(RunStageTest, StageTwoKeepsAdapters) {
  Model m(small_config(), 2);
  const Model before(m.config(), m.params());
  run_stage(quick(2, 3), m, {});
  const auto a = before.params().tensors();
  const auto b = m.params().tensors();
  for (size_t i = 0; i < a.size(); ++i) {
    if (a[i].group == ParamGroup::kAdapters) EXPECT_EQ(*a[i].value, *b[i].value) << a[i].name;
  }
  EXPECT_NE(before.params().blocks[0].wq, m.params().blocks[0].wq);
}

TEST(RunStageTest, LossCurveIsReproducible) {
  Model a(small_config(), 3);
  Model b(small_config(), 3);
  const RunRecord ra = run_stage(quick(3, 4), a, {});
  const RunRecord rb = run_stage(quick(3, 4), b, {});
  EXPECT_EQ(ra.losses, rb.losses);
  EXPECT_EQ(ra.lineage, rb.lineage);
}

TEST(RunStageTest, NonFiniteLossAborts) {
  Model m(small_config(), 4);
  m.params().final_norm(0, 0) = std::numeric_limits<float>::quiet_NaN();
  const RunRecord r = run_stage(quick(2, 5), m, {});
  EXPECT_TRUE(r.aborted);
  EXPECT_EQ(r.losses.size(), 1u);
  EXPECT_NE(run_record_to_json(r).find("\"aborted\": true"), std::string::npos);
}

TEST(RunStageTest, MemorizesOneSample) {
  Model m(small_config(), 5);
  StageData data;
  data.fixed = gen_task_data(m.layout(), {TaskKind::kAsr, 6, 1});
  StageConfig c = quick(3, 300);
  c.batch_size = 1;
  c.lr_scale = 200.0;
  const RunRecord r = run_stage(c, m, data);
  EXPECT_LT(r.losses.back(), r.losses.front());
  EXPECT_LT(r.losses.back(), 0.01);
  EXPECT_TRUE(exact_match(m, data.fixed[0]));
  Dataset d{m.layout(), {TaskKind::kAsr, 6, 1}, {}, data.fixed};
  const auto metrics = evaluate(m, {d});
  EXPECT_EQ(metrics.at("asr").exact_match, 1.0);
  EXPECT_EQ(metrics.at("asr").next_token_accuracy, 1.0);
}

TEST(RunStageTest, LineageChainsAndCheckpointIsWritten) {
  Model m(small_config(), 7);
  const std::string path = ::testing::TempDir() + "omni_stage_ck";
  StageRunOptions o;
  o.checkpoint_path = path;
  o.parent.lineage = {{0, params_hash(m.params())}};
  const RunRecord r1 = run_stage(quick(1, 1), m, {}, o);
  ASSERT_EQ(r1.lineage.size(), 2u);
  EXPECT_EQ(r1.lineage[1].stage, 1);
  EXPECT_EQ(r1.lineage[1].params_hash, params_hash(m.params()));
  const LoadedCheckpoint ck = load_checkpoint(path);
  EXPECT_EQ(ck.meta.stage, 1);
  EXPECT_EQ(ck.meta.lineage, r1.lineage);
}

TEST(EvaluateTest, DeterministicAndLayoutChecked) {
  const Model m(small_config(), 8);
  const Dataset d = make_dataset(m.layout(), {TaskKind::kTextQa, 1, 3});
  EXPECT_EQ(metrics_to_json(evaluate(m, {d})), metrics_to_json(evaluate(m, {d})));
  Dataset other = d;
  other.layout = default_layout();
  EXPECT_THROW(evaluate(m, {other}), InvalidArgument);
}

TEST(EvaluateTest, UntrainedModelIsAtChanceOnTheFullLayout) {
  ModelConfig c = paper_model_config();
  c.d_model = 8;
  c.n_trunk_layers = 1;
  c.n_attn_heads = 2;
  c.ffn_hidden = 8;
  c.adapter_hidden = 8;
  c.vision_feature_width = 4;
  c.audio_feature_width = 4;
  c.context_length = 64;
  const Model m(c, 9);
  const Dataset d = make_dataset(c.vocab, {TaskKind::kTextQa, 2, 20});
  const auto metrics = evaluate(m, {d});
  EXPECT_LT(metrics.at("text_qa").next_token_accuracy, 0.01);
  EXPECT_EQ(metrics.at("text_qa").exact_match, 0.0);
}

}  // namespace
}  // namespace omni
