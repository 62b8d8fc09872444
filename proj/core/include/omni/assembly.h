// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_ASSEMBLY_H_
#define OMNI_ASSEMBLY_H_

#include <optional>
#include <set>
#include <span>
#include <vector>

#include "omni/features.h"
#include "omni/task_kind.h"
#include "omni/tensor.h"
#include "omni/vocab.h"

namespace omni {

// Gated feed-forward projection (project-up, gate, project-down) mapping
// encoder features into the model embedding space:
//   y = (silu(x * w_gate) .* (x * w_up)) * w_down
template <typename T>
struct AdapterWeights {
  Mat<T> w_gate;  // D_enc x I
  Mat<T> w_up;    // D_enc x I
  Mat<T> w_down;  // I x D_model

  int input_width() const { return static_cast<int>(w_gate.rows()); }
  int output_width() const { return static_cast<int>(w_down.cols()); }

  Mat<T> apply(const Mat<T>& x) const;
};

// Where an assembled step came from. Declaration order is placement order.
enum class StepSource : unsigned char {
  kVisionFeature,
  kAudioFeature,
  kTokenColumn,
  kResponseMarker,
};

// One step of the model input before embedding. Token steps carry one id per
// grid row; feature steps carry only the layer-0 placeholder id.
struct InputStep {
  StepSource source = StepSource::kTokenColumn;
  int feature_row = -1;
  std::vector<TokenId> column;
};

struct InputPlan {
  std::vector<InputStep> steps;
  int length() const { return static_cast<int>(steps.size()); }
};

struct EffectiveInputSequence {
  MatF steps;  // length x d_model
  std::vector<StepSource> provenance;
  int length() const { return static_cast<int>(steps.rows()); }
};

// Singleton modality sets have a default task; mixed sets return nullopt and
// need an explicit marker.
std::optional<TaskKind> default_task(const std::set<Modality>& present);

// Column used for a text-region token in an input block: the token on row 0
// and each audio layer's PAD elsewhere.
std::vector<TokenId> text_column(const VocabLayout& layout, TokenId text);

// The response marker step. Audio rows carry BOA when the task answers in
// audio and PAD otherwise.
std::vector<TokenId> marker_column(const VocabLayout& layout, TaskKind task);

// Symbolic layout of [vision][audio][text][marker]. Throws InvalidArgument when
// every block is empty or when a mixed input has no explicit task.
InputPlan plan_input(const VocabLayout& layout, int vision_length,
                     int audio_length, std::span<const TokenId> text,
                     std::optional<TaskKind> task);

// The rows x d_model slot matrix of one step; the step's input vector is its
// column-wise mean.
template <typename T>
Mat<T> step_slots(const VocabLayout& layout, std::span<const Mat<T>> tables,
                  const InputStep& step, const Mat<T>* vision,
                  const Mat<T>* audio);

template <typename T>
Mat<T> realize_plan(const VocabLayout& layout, std::span<const Mat<T>> tables,
                    const InputPlan& plan, const Mat<T>* vision,
                    const Mat<T>* audio);

struct AssemblyInput {
  std::optional<FeatureSequence> vision;  // already adapter-projected
  std::optional<FeatureSequence> audio;   // already adapter-projected
  std::optional<std::vector<TokenId>> text;
  std::optional<TaskKind> task;
};

// Builds the effective input sequence. tables are the per-row embedding
// tables (row 0 text region, row k audio layer k). Throws InvalidArgument on
// an empty input or a feature width different from the table width.
EffectiveInputSequence assemble(const VocabLayout& layout,
                                std::span<const MatF> tables,
                                const AssemblyInput& input);

}  // namespace omni

#endif  // OMNI_ASSEMBLY_H_
