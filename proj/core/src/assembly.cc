// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/assembly.h"

#include <cmath>
#include <string>

#include "omni/error.h"

namespace omni {

template <typename T>
Mat<T> AdapterWeights<T>::apply(const Mat<T>& x) const {
  const Mat<T> gate = x * w_gate;
  const Mat<T> up = x * w_up;
  Mat<T> hidden(gate.rows(), gate.cols());
  for (Eigen::Index i = 0; i < gate.size(); ++i) {
    const T g = gate.data()[i];
    hidden.data()[i] = g / (T(1) + std::exp(-g)) * up.data()[i];
  }
  return hidden * w_down;
}

std::optional<TaskKind> default_task(const std::set<Modality>& present) {
  if (present.size() != 1) return std::nullopt;
  switch (*present.begin()) {
    case Modality::kVision: return TaskKind::kImageCaption;
    case Modality::kAudio: return TaskKind::kAudioQaTextOut;
    case Modality::kText: return TaskKind::kTextQa;
  }
  return std::nullopt;
}

std::vector<TokenId> text_column(const VocabLayout& layout, TokenId text) {
  std::vector<TokenId> column(layout.row_count());
  column[0] = text;
  for (int r = 1; r < layout.row_count(); ++r) column[r] = pad_id(layout, r);
  return column;
}

std::vector<TokenId> marker_column(const VocabLayout& layout, TaskKind task) {
  std::vector<TokenId> column(layout.row_count());
  column[0] = response_mark(layout, task);
  const bool audio = task_emits_audio(task);
  for (int r = 1; r < layout.row_count(); ++r) {
    column[r] = audio ? control_id(layout, {ControlKind::kAudioBoa, r})
                      : pad_id(layout, r);
  }
  return column;
}

InputPlan plan_input(const VocabLayout& layout, int vision_length,
                     int audio_length, std::span<const TokenId> text,
                     std::optional<TaskKind> task) {
  std::set<Modality> present;
  if (vision_length > 0) present.insert(Modality::kVision);
  if (audio_length > 0) present.insert(Modality::kAudio);
  if (!text.empty()) present.insert(Modality::kText);
  if (present.empty()) throw InvalidArgument("assembly needs at least one modality");
  if (!task) task = default_task(present);
  if (!task) {
    throw InvalidArgument("mixed-modality input requires an explicit task marker");
  }
  InputPlan plan;
  plan.steps.reserve(vision_length + audio_length + text.size() + 1);
  const TokenId vision_mark = vision_length > 0 ? modality_mark(layout, Modality::kVision) : 0;
  for (int i = 0; i < vision_length; ++i) {
    plan.steps.push_back({StepSource::kVisionFeature, i, {vision_mark}});
  }
  const TokenId audio_mark = audio_length > 0 ? modality_mark(layout, Modality::kAudio) : 0;
  for (int i = 0; i < audio_length; ++i) {
    plan.steps.push_back({StepSource::kAudioFeature, i, {audio_mark}});
  }
  for (TokenId id : text) {
    if (id < 0 || id >= layout.text_region_size) {
      throw InvalidArgument("text token " + std::to_string(id) +
                            " is outside the text region");
    }
    plan.steps.push_back({StepSource::kTokenColumn, -1, text_column(layout, id)});
  }
  plan.steps.push_back({StepSource::kResponseMarker, -1, marker_column(layout, *task)});
  return plan;
}

template <typename T>
Mat<T> step_slots(const VocabLayout& layout, std::span<const Mat<T>> tables,
                  const InputStep& step, const Mat<T>* vision,
                  const Mat<T>* audio) {
  const int rows = layout.row_count();
  const int width = static_cast<int>(tables[0].cols());
  Mat<T> slots(rows, width);
  const Coord mark = locate(layout, step.column.at(0));
  slots.row(0) = tables[mark.layer].row(mark.local);
  if (step.source == StepSource::kVisionFeature ||
      step.source == StepSource::kAudioFeature) {
    const Mat<T>* features = step.source == StepSource::kVisionFeature ? vision : audio;
    if (features == nullptr || step.feature_row >= features->rows()) {
      throw InvalidArgument("feature step has no matching feature row");
    }
    if (features->cols() != width) {
      throw InvalidArgument("feature width " + std::to_string(features->cols()) +
                            " does not match model width " + std::to_string(width));
    }
    for (int r = 1; r < rows; ++r) slots.row(r) = features->row(step.feature_row);
    return slots;
  }
  if (static_cast<int>(step.column.size()) != rows) {
    throw InvalidArgument("token column has the wrong number of rows");
  }
  for (int r = 1; r < rows; ++r) {
    const Coord c = locate(layout, step.column[r]);
    slots.row(r) = tables[c.layer].row(c.local);
  }
  return slots;
}

template <typename T>
Mat<T> realize_plan(const VocabLayout& layout, std::span<const Mat<T>> tables,
                    const InputPlan& plan, const Mat<T>* vision,
                    const Mat<T>* audio) {
  const int width = static_cast<int>(tables[0].cols());
  Mat<T> out(plan.length(), width);
  for (int t = 0; t < plan.length(); ++t) {
    out.row(t) = step_slots<T>(layout, tables, plan.steps[t], vision, audio)
                     .colwise()
                     .mean();
  }
  return out;
}

EffectiveInputSequence assemble(const VocabLayout& layout,
                                std::span<const MatF> tables,
                                const AssemblyInput& input) {
  if (tables.size() != static_cast<size_t>(layout.row_count())) {
    throw InvalidArgument("need one embedding table per grid row");
  }
  const int width = static_cast<int>(tables[0].cols());
  for (const auto* f : {&input.vision, &input.audio}) {
    if (!f->has_value()) continue;
    validate_features(**f);
    if ((*f)->width() != width) {
      throw InvalidArgument("projected feature width " +
                            std::to_string((*f)->width()) +
                            " does not match model width " + std::to_string(width));
    }
  }
  if (input.vision && input.vision->modality != Modality::kVision) {
    throw InvalidArgument("vision slot holds non-vision features");
  }
  if (input.audio && input.audio->modality != Modality::kAudio) {
    throw InvalidArgument("audio slot holds non-audio features");
  }
  static const std::vector<TokenId> kNoText;
  const std::vector<TokenId>& text = input.text ? *input.text : kNoText;
  const InputPlan plan =
      plan_input(layout, input.vision ? input.vision->length() : 0,
                 input.audio ? input.audio->length() : 0, text, input.task);
  EffectiveInputSequence out;
  out.steps = realize_plan<float>(layout, tables, plan,
                                  input.vision ? &input.vision->vectors : nullptr,
                                  input.audio ? &input.audio->vectors : nullptr);
  out.provenance.reserve(plan.steps.size());
  for (const InputStep& s : plan.steps) out.provenance.push_back(s.source);
  return out;
}

template struct AdapterWeights<float>;
template struct AdapterWeights<double>;
template Mat<float> step_slots<float>(const VocabLayout&, std::span<const Mat<float>>,
                                      const InputStep&, const Mat<float>*,
                                      const Mat<float>*);
template Mat<double> step_slots<double>(const VocabLayout&, std::span<const Mat<double>>,
                                        const InputStep&, const Mat<double>*,
                                        const Mat<double>*);
template Mat<float> realize_plan<float>(const VocabLayout&, std::span<const Mat<float>>,
                                        const InputPlan&, const Mat<float>*,
                                        const Mat<float>*);
template Mat<double> realize_plan<double>(const VocabLayout&, std::span<const Mat<double>>,
                                          const InputPlan&, const Mat<double>*,
                                          const Mat<double>*);

}  // namespace omni
