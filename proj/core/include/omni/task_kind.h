// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_TASK_KIND_H_
#define OMNI_TASK_KIND_H_

#include <array>
#include <optional>
#include <string_view>

namespace omni {

// Input modalities. Values are stable: they appear in feature files.
enum class Modality : unsigned char { kVision = 0, kAudio = 1, kText = 2 };

inline constexpr int kModalityCount = 3;

// Every task the model knows. Each one owns a response marker id in the text
// region, so the marker step tells the model what to produce.
enum class TaskKind : unsigned char {
  kAsr = 0,
  kTextQa = 1,
  kAudioQaTextOut = 2,
  kVisualQaTextOut = 3,
  kAudioQaAudioOut = 4,
  kVisualQaAudioOut = 5,
  kImageCaption = 6,
  kInterrupt = 7,
};

inline constexpr int kTaskKindCount = 8;

inline constexpr std::array<TaskKind, kTaskKindCount> kAllTasks = {
    TaskKind::kAsr,           TaskKind::kTextQa,
    TaskKind::kAudioQaTextOut, TaskKind::kVisualQaTextOut,
    TaskKind::kAudioQaAudioOut, TaskKind::kVisualQaAudioOut,
    TaskKind::kImageCaption,  TaskKind::kInterrupt,
};

constexpr std::string_view task_name(TaskKind task) {
  switch (task) {
    case TaskKind::kAsr: return "asr";
    case TaskKind::kTextQa: return "text_qa";
    case TaskKind::kAudioQaTextOut: return "audio_qa_text_out";
    case TaskKind::kVisualQaTextOut: return "visual_qa_text_out";
    case TaskKind::kAudioQaAudioOut: return "audio_qa_audio_out";
    case TaskKind::kVisualQaAudioOut: return "visual_qa_audio_out";
    case TaskKind::kImageCaption: return "image_caption";
    case TaskKind::kInterrupt: return "interrupt";
  }
  return "unknown";
}

constexpr std::optional<TaskKind> parse_task(std::string_view name) {
  for (TaskKind t : kAllTasks) {
    if (task_name(t) == name) return t;
  }
  // Aliases used when the task is picked implicitly from the input modality.
  if (name == "speech_to_text_qa") return TaskKind::kAudioQaTextOut;
  if (name == "text_to_text_qa") return TaskKind::kTextQa;
  return std::nullopt;
}

constexpr bool task_emits_audio(TaskKind task) {
  return task == TaskKind::kAudioQaAudioOut ||
         task == TaskKind::kVisualQaAudioOut;
}

constexpr std::string_view modality_name(Modality m) {
  switch (m) {
    case Modality::kVision: return "vision";
    case Modality::kAudio: return "audio";
    case Modality::kText: return "text";
  }
  return "unknown";
}

}  // namespace omni

#endif  // OMNI_TASK_KIND_H_
