// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/assembly.h"

#include <gtest/gtest.h>

#include "omni/error.h"
#include "omni/rng.h"

namespace omni {
namespace {

std::vector<MatF> random_tables(const VocabLayout& v, int width, uint64_t seed) {
  Rng rng(seed);
  std::vector<MatF> tables;
  for (int r = 0; r < v.row_count(); ++r) {
    MatF t(v.region_width(r), width);
    for (Eigen::Index i = 0; i < t.size(); ++i) t.data()[i] = static_cast<float>(rng.normal());
    tables.push_back(std::move(t));
  }
  return tables;
}

FeatureSequence random_features(Modality m, int length, int width, Rng& rng) {
  FeatureSequence f{m, MatF(length, width)};
  for (Eigen::Index i = 0; i < f.vectors.size(); ++i) {
    f.vectors.data()[i] = static_cast<float>(rng.normal());
  }
  return f;
}

TEST(AssemblyTest, DefaultTasks) {
  EXPECT_EQ(default_task({Modality::kVision}), TaskKind::kImageCaption);
  EXPECT_EQ(default_task({Modality::kAudio}), TaskKind::kAudioQaTextOut);
  EXPECT_EQ(default_task({Modality::kText}), TaskKind::kTextQa);
  EXPECT_EQ(default_task({Modality::kVision, Modality::kAudio}), std::nullopt);
}

TEST(AssemblyTest, MarkerColumnCarriesBoaOnlyForAudioTasks) {
  const VocabLayout v = desk_layout();
  const auto audio = marker_column(v, TaskKind::kAudioQaAudioOut);
  const auto text = marker_column(v, TaskKind::kAudioQaTextOut);
  EXPECT_EQ(audio[0], response_mark(v, TaskKind::kAudioQaAudioOut));
  EXPECT_EQ(text[0], response_mark(v, TaskKind::kAudioQaTextOut));
  for (int k = 1; k <= 7; ++k) {
    EXPECT_EQ(audio[k], control_id(v, {ControlKind::kAudioBoa, k}));
    EXPECT_EQ(text[k], pad_id(v, k));
  }
  const auto col = text_column(v, 12);
  EXPECT_EQ(col[0], 12);
  for (int k = 1; k <= 7; ++k) EXPECT_EQ(col[k], pad_id(v, k));
}

TEST(AssemblyTest, PlanOrderAndLength) {
  const VocabLayout v = desk_layout();
  const std::vector<TokenId> text{3, 4};
  const InputPlan p = plan_input(v, 50, 6, text, TaskKind::kVisualQaAudioOut);
  ASSERT_EQ(p.length(), 50 + 6 + 2 + 1);
  EXPECT_EQ(p.steps[0].source, StepSource::kVisionFeature);
  EXPECT_EQ(p.steps[49].feature_row, 49);
  EXPECT_EQ(p.steps[50].source, StepSource::kAudioFeature);
  EXPECT_EQ(p.steps[56].source, StepSource::kTokenColumn);
  EXPECT_EQ(p.steps.back().source, StepSource::kResponseMarker);
}

TEST(AssemblyTest, RejectsEmptyAndAmbiguousInputs) {
  const VocabLayout v = desk_layout();
  EXPECT_THROW(plan_input(v, 0, 0, {}, TaskKind::kAsr), InvalidArgument);
  EXPECT_THROW(plan_input(v, 50, 3, {}, std::nullopt), InvalidArgument);
  const std::vector<TokenId> bad{v.text_region_size};
  EXPECT_THROW(plan_input(v, 0, 0, bad, std::nullopt), InvalidArgument);
}

TEST(AssemblyTest, StepsAverageTheRowSlots) {
  const VocabLayout v = desk_layout();
  const int width = 6;
  const auto tables = random_tables(v, width, 11);
  Rng rng(12);
  AssemblyInput in;
  in.audio = random_features(Modality::kAudio, 2, width, rng);
  in.text = std::vector<TokenId>{5};
  in.task = TaskKind::kAudioQaAudioOut;
  const EffectiveInputSequence e = assemble(v, tables, in);
  ASSERT_EQ(e.length(), 2 + 1 + 1);
  const float rows = 8.0f;

  // Feature step: modality mark in slot 0, the feature replicated in the rest.
  const TokenId mark = modality_mark(v, Modality::kAudio);
  const RowVec<float> want0 =
      (tables[0].row(mark) + 7.0f * in.audio->vectors.row(0)) / rows;
  EXPECT_LT((e.steps.row(0) - want0).cwiseAbs().maxCoeff(), 1e-5f);

  // Token step: mean of the per-row embeddings.
  RowVec<float> want2 = tables[0].row(5);
  for (int k = 1; k <= 7; ++k) {
    want2 += tables[k].row(pad_id(v, k) - v.region_offset(k));
  }
  want2 /= rows;
  EXPECT_LT((e.steps.row(2) - want2).cwiseAbs().maxCoeff(), 1e-5f);

  EXPECT_EQ(e.provenance[0], StepSource::kAudioFeature);
  EXPECT_EQ(e.provenance[2], StepSource::kTokenColumn);
  EXPECT_EQ(e.provenance[3], StepSource::kResponseMarker);
}

TEST(AssemblyTest, WidthMismatchThrows) {
  const VocabLayout v = desk_layout();
  const auto tables = random_tables(v, 6, 1);
  Rng rng(2);
  AssemblyInput in;
  in.audio = random_features(Modality::kAudio, 2, 5, rng);
  EXPECT_THROW(assemble(v, tables, in), InvalidArgument);
}

TEST(AssemblyTest, LengthLawOverRandomMixes) {
  const VocabLayout v = desk_layout();
  const auto tables = random_tables(v, 4, 3);
  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    AssemblyInput in;
    int want = 1;
    if (rng.below(2)) {
      in.vision = random_features(Modality::kVision, 50, 4, rng);
      want += 50;
    }
    if (rng.below(2)) {
      const int n = static_cast<int>(rng.range(1, 20));
      in.audio = random_features(Modality::kAudio, n, 4, rng);
      want += n;
    }
    if (rng.below(2) || want == 1) {
      std::vector<TokenId> text(static_cast<size_t>(rng.range(1, 10)), 7);
      want += static_cast<int>(text.size());
      in.text = text;
    }
    in.task = TaskKind::kVisualQaTextOut;
    EXPECT_EQ(assemble(v, tables, in).length(), want);
  }
}

}  // namespace
}  // namespace omni
