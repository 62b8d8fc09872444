// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_TASKS_H_
#define OMNI_TASKS_H_

#include <cstdint>
#include <iosfwd>
#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "omni/delay_grid.h"
#include "omni/duplex.h"
#include "omni/features.h"
#include "omni/model.h"
#include "omni/task_kind.h"

namespace omni {

// Synthetic tasks speak a small word vocabulary. Word w is text id w and is
// pronounced as one audio frame whose layer-k code is (a_k * w + b_k) mod the
// code count, a_k = 2k + 3 and b_k = 5k + 1.
struct TaskOptions {
  int word_vocab = 48;
  int min_words = 4;
  int max_words = 6;
  double frame_rate = 2.0;           // interrupt streams, frames per second
  double phrase_substitution = 0.3;  // stop-phrase code substitution bound
  InterruptDatasetOptions interrupt;

  void validate(const VocabLayout& layout) const;
};

AudioFrame speak(const VocabLayout& layout, int word);
std::vector<AudioFrame> speak(const VocabLayout& layout, std::span<const int> words);
int qa_answer(int word, int word_vocab);  // (7w + 11) mod word_vocab
// A visual question is one spoken slot name q in 0..3 asking for object q mod 4.
int visual_answer(int word, const std::array<int, kSceneObjects>& scene);

struct InputBundle {
  TaskKind task = TaskKind::kTextQa;
  std::optional<uint64_t> image_seed;  // stub vision encoder input
  std::vector<AudioFrame> audio;       // spoken input (raw frames when interrupt)
  std::vector<TokenId> text;
  friend bool operator==(const InputBundle&, const InputBundle&) = default;
};

struct TaskSample {
  InputBundle input;
  TokenGrid target;  // aligned; for interrupt, row 0 holds the per-frame status
  std::optional<InterruptSample> interrupt;
};

struct SyntheticTask {
  TaskKind kind = TaskKind::kAsr;
  uint64_t seed = 0;
  int size = 0;
};

// Sample index of a task stream; a pure function of (kind, seed, index).
TaskSample gen_task_sample(const VocabLayout& layout, TaskKind kind, uint64_t seed,
                           int64_t index, const TaskOptions& options = {});

std::vector<TaskSample> gen_task_data(const VocabLayout& layout, const SyntheticTask& task,
                                      const TaskOptions& options = {});

// Recomputes the target of an input from the closed-form mappings.
TokenGrid expected_target(const VocabLayout& layout, const InputBundle& input,
                          const TaskOptions& options = {});

struct Dataset {
  VocabLayout layout;
  SyntheticTask task;
  TaskOptions options;
  std::vector<TaskSample> samples;
};

Dataset make_dataset(const VocabLayout& layout, const SyntheticTask& task,
                     const TaskOptions& options = {});

// JSONL: a header line {"header":{layout, task, seed, size, options}}, then one
// line per sample {"task", "input":{image_seed, audio, text}, "target":{"rows"}}
// with the interrupt fields inline for interrupt samples.
void write_dataset(std::ostream& out, const Dataset& dataset);
Dataset read_dataset(std::istream& in);
void save_dataset(const std::string& path, const Dataset& dataset);
Dataset load_dataset(const std::string& path);

// Encoder features of a sample's inputs (stub encoders).
std::optional<FeatureSequence> vision_features(const ModelConfig& config,
                                               const InputBundle& input);
std::optional<FeatureSequence> audio_features(const ModelConfig& config,
                                              const InputBundle& input);

// Prefix plan of a non-interrupt sample, ending with the response marker.
InputPlan sample_plan(const VocabLayout& layout, const InputBundle& input);

TrainingExample make_training_example(const ModelConfig& config, const TaskSample& sample);

}  // namespace omni

#endif  // OMNI_TASKS_H_
