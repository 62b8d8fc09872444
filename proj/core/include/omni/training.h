// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_TRAINING_H_
#define OMNI_TRAINING_H_

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "omni/checkpoint.h"
#include "omni/model.h"
#include "omni/tasks.h"

namespace omni {

enum class Scale : unsigned char { kDesk, kPaper };

std::optional<Scale> parse_scale(std::string_view name);
std::string_view scale_name(Scale scale);

struct StageConfig {
  int stage = 1;
  GroupMask trainable_groups;
  std::vector<std::pair<TaskKind, double>> task_mix;
  double lr_min = 0.0;
  double lr_max = 0.0;
  // Multiplies the whole range. 1 at paper scale.
  double lr_scale = 1.0;
  int warmup_steps = 0;
  int batch_size = 1;
  int steps = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double grad_clip = 1.0;
  uint64_t seed = 0;

  // Throws InvalidArgument when a stage invariant is broken.
  void validate() const;
};

// Paper scale: the quoted ranges, warmup 1,500 and batch 192. Desk scale:
// warmup 50, batch 16 (32 in stages 2 and 3), 2,000 steps, the same ranges,
// with lr_scale lifting them for a trunk that starts from random weights.
std::array<StageConfig, 3> default_stage_configs(Scale scale);
std::array<StageConfig, 3> default_stage_configs(std::string_view scale);

// Linear warmup to the peak, then cosine decay reaching lr_min on the last step.
double learning_rate(const StageConfig& config, int step);

// Decoupled weight decay Adam over the trainable groups.
class AdamW {
 public:
  explicit AdamW(const ModelParams<float>& shapes);
  void step(ModelParams<float>& params, const ModelParams<float>& grads,
            const StageConfig& config, double lr);

 private:
  ModelParams<float> m_;
  ModelParams<float> v_;
  int64_t t_ = 0;
};

// Batches either cycle through fixed samples or draw fresh samples from the
// stage's task mix.
struct StageData {
  TaskOptions options;
  std::vector<TaskSample> fixed;
};

struct RunRecord {
  std::vector<StageConfig> stages;
  std::vector<double> losses;  // mean per-token loss of each step
  std::map<std::string, double> eval_metrics;
  std::vector<LineageEntry> lineage;
  double wall_seconds = 0.0;
  bool aborted = false;
  std::string abort_reason;
  bool frozen_unchanged = true;
};

std::string run_record_to_json(const RunRecord& record);

struct StageRunOptions {
  std::string checkpoint_path;  // empty: no checkpoint
  CheckpointMeta parent;        // lineage of the starting weights
  std::function<void(int step, double loss, double lr)> on_step;
};

// Trains the model in place. Parameters outside trainable_groups are checked
// bitwise afterwards. A non-finite loss stops the run and sets aborted.
RunRecord run_stage(const StageConfig& config, Model& model, const StageData& data,
                    const StageRunOptions& options = {});

struct TaskMetrics {
  double next_token_accuracy = 0.0;
  double exact_match = 0.0;
  int samples = 0;
};

// Teacher-forced argmax accuracy over target cells, and whole-sequence exact
// match under greedy decoding (per-frame statuses for interrupt streams).
// Throws InvalidArgument when a dataset layout differs from the model's.
std::map<std::string, TaskMetrics> evaluate(const Model& model,
                                            const std::vector<Dataset>& datasets);

bool exact_match(const Model& model, const TaskSample& sample);

std::string metrics_to_json(const std::map<std::string, TaskMetrics>& metrics);

}  // namespace omni

#endif  // OMNI_TRAINING_H_
