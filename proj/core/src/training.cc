// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/training.h"

#include <chrono>
#include <cmath>

#include "json_io.h"
#include "omni/error.h"
#include "omni/generate.h"
#include "omni/rng.h"

namespace omni {
namespace {

std::vector<std::pair<TaskKind, double>> uniform_mix(std::initializer_list<TaskKind> tasks) {
  std::vector<std::pair<TaskKind, double>> mix;
  for (TaskKind t : tasks) mix.emplace_back(t, 1.0);
  return mix;
}

Json stage_json(const StageConfig& c) {
  Json groups = Json::array();
  for (ParamGroup g : kAllGroups) {
    if (c.trainable_groups.contains(g)) groups.push_back(std::string(group_name(g)));
  }
  Json mix = Json::object();
  for (const auto& [task, w] : c.task_mix) mix[std::string(task_name(task))] = w;
  return Json{{"stage", c.stage},
              {"trainable_groups", groups},
              {"task_mix", mix},
              {"lr_range", {c.lr_min, c.lr_max}},
              {"lr_scale", c.lr_scale},
              {"warmup_steps", c.warmup_steps},
              {"batch_size", c.batch_size},
              {"steps", c.steps},
              {"weight_decay", c.weight_decay},
              {"betas", {c.beta1, c.beta2}},
              {"grad_clip", c.grad_clip},
              {"seed", c.seed}};
}

bool decays(const std::string& name) {
  return name.find("norm") == std::string::npos;
}

}  // namespace

std::optional<Scale> parse_scale(std::string_view name) {
  if (name == "desk") return Scale::kDesk;
  if (name == "paper") return Scale::kPaper;
  return std::nullopt;
}

std::string_view scale_name(Scale scale) {
  return scale == Scale::kDesk ? "desk" : "paper";
}

void StageConfig::validate() const {
  if (stage < 1 || stage > 3) throw InvalidArgument("stage must be 1, 2 or 3");
  if (trainable_groups.empty()) throw InvalidArgument("no trainable parameter groups");
  if (stage == 1 && !(trainable_groups == GroupMask{ParamGroup::kAdapters})) {
    throw InvalidArgument("stage 1 trains the adapters only");
  }
  if (stage == 2 && (trainable_groups.contains(ParamGroup::kAdapters) ||
                     !trainable_groups.contains(ParamGroup::kTrunk))) {
    throw InvalidArgument("stage 2 freezes the adapters and trains the trunk");
  }
  bool audio_out = false;
  double total = 0.0;
  for (const auto& [task, w] : task_mix) {
    if (w < 0.0) throw InvalidArgument("task weights must be non-negative");
    total += w;
    audio_out |= task_emits_audio(task) && w > 0.0;
  }
  if (!(total > 0.0)) throw InvalidArgument("task mix has no weight");
  if (stage == 3 && !audio_out) {
    throw InvalidArgument("stage 3 needs audio-output tasks in its mix");
  }
  if (!(lr_min >= 0.0 && lr_max >= lr_min && lr_scale > 0.0)) {
    throw InvalidArgument("bad learning rate range");
  }
  if (warmup_steps < 0 || batch_size < 1 || steps < 0) {
    throw InvalidArgument("bad step, warmup or batch settings");
  }
}

std::array<StageConfig, 3> default_stage_configs(Scale scale) {
  std::array<StageConfig, 3> s;
  s[0].stage = 1;
  s[0].trainable_groups = {ParamGroup::kAdapters};
  s[0].task_mix = uniform_mix({TaskKind::kAsr, TaskKind::kImageCaption});
  s[0].lr_min = 2e-5;
  s[0].lr_max = 1e-3;

  s[1].stage = 2;
  s[1].trainable_groups = {ParamGroup::kTrunk, ParamGroup::kEmbeddings, ParamGroup::kHeads};
  s[1].task_mix = uniform_mix({TaskKind::kTextQa, TaskKind::kAsr, TaskKind::kAudioQaTextOut,
                               TaskKind::kVisualQaTextOut, TaskKind::kImageCaption});
  s[1].lr_min = 2e-6;
  s[1].lr_max = 2e-4;

  s[2].stage = 3;
  s[2].trainable_groups = GroupMask::all();
  s[2].task_mix = uniform_mix({TaskKind::kAsr, TaskKind::kTextQa, TaskKind::kAudioQaAudioOut,
                               TaskKind::kVisualQaAudioOut, TaskKind::kImageCaption,
                               TaskKind::kInterrupt});
  s[2].lr_min = 2e-6;
  s[2].lr_max = 2e-5;

  for (int i = 0; i < 3; ++i) {
    StageConfig& c = s[i];
    if (scale == Scale::kPaper) {
      c.warmup_steps = 1500;
      c.batch_size = 192;
      c.steps = 20000;
    } else {
      c.warmup_steps = 50;
      c.batch_size = 16;
      c.steps = 2000;
    }
    c.seed = static_cast<uint64_t>(i + 1);
  }
  if (scale == Scale::kDesk) {
    // Same peak (2e-3) for every stage.
    s[0].lr_scale = 2.0;
    s[1].lr_scale = 10.0;
    s[2].lr_scale = 100.0;
    // Stages 2 and 3 mix five or six tasks; 16 samples per step was too noisy.
    s[1].batch_size = 32;
    s[2].batch_size = 32;
  }
  return s;
}

std::array<StageConfig, 3> default_stage_configs(std::string_view scale) {
  const auto parsed = parse_scale(scale);
  if (!parsed) throw InvalidArgument("unknown scale '" + std::string(scale) + "'");
  return default_stage_configs(*parsed);
}

double learning_rate(const StageConfig& c, int step) {
  const double peak = c.lr_max * c.lr_scale;
  const double floor = c.lr_min * c.lr_scale;
  if (step < c.warmup_steps) return peak * (step + 1) / c.warmup_steps;
  const int span = std::max(1, c.steps - c.warmup_steps - 1);
  const double progress = std::min(1.0, static_cast<double>(step - c.warmup_steps) / span);
  return floor + 0.5 * (peak - floor) * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(const ModelParams<float>& shapes)
    : m_(shapes.zeros_like()), v_(shapes.zeros_like()) {}

void AdamW::step(ModelParams<float>& params, const ModelParams<float>& grads,
                 const StageConfig& config, double lr) {
  ++t_;
  auto values = params.tensors();
  const auto g = grads.tensors();
  auto m = m_.tensors();
  auto v = v_.tensors();
  double norm2 = 0.0;
  for (size_t i = 0; i < values.size(); ++i) {
    if (config.trainable_groups.contains(values[i].group)) {
      norm2 += g[i].value->template cast<double>().squaredNorm();
    }
  }
  const double norm = std::sqrt(norm2);
  const float clip = config.grad_clip > 0.0 && norm > config.grad_clip
                         ? static_cast<float>(config.grad_clip / norm)
                         : 1.0f;
  const float b1 = static_cast<float>(config.beta1);
  const float b2 = static_cast<float>(config.beta2);
  const float c1 = static_cast<float>(1.0 - std::pow(config.beta1, static_cast<double>(t_)));
  const float c2 = static_cast<float>(1.0 - std::pow(config.beta2, static_cast<double>(t_)));
  const float rate = static_cast<float>(lr);
  constexpr float kEps = 1e-8f;
  for (size_t i = 0; i < values.size(); ++i) {
    if (!config.trainable_groups.contains(values[i].group)) continue;
    const float decay = decays(values[i].name) ? static_cast<float>(config.weight_decay) : 0.0f;
    float* w = values[i].value->data();
    const float* gi = g[i].value->data();
    float* mi = m[i].value->data();
    float* vi = v[i].value->data();
    const Eigen::Index n = values[i].value->size();
    for (Eigen::Index k = 0; k < n; ++k) {
      const float grad = gi[k] * clip;
      mi[k] = b1 * mi[k] + (1.0f - b1) * grad;
      vi[k] = b2 * vi[k] + (1.0f - b2) * grad * grad;
      const float update = (mi[k] / c1) / (std::sqrt(vi[k] / c2) + kEps);
      w[k] -= rate * (update + decay * w[k]);
    }
  }
}

std::string run_record_to_json(const RunRecord& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) stages.push_back(stage_json(s));
  Json lineage = Json::array();
  for (const auto& l : r.lineage) {
    lineage.push_back({{"stage", l.stage}, {"params_hash", l.params_hash}});
  }
  Json losses = Json::array();
  for (double l : r.losses) {
    losses.push_back(std::isfinite(l) ? Json(l) : Json(nullptr));
  }
  return Json{{"stages", stages},
              {"losses", losses},
              {"eval_metrics", r.eval_metrics},
              {"lineage", lineage},
              {"wall_seconds", r.wall_seconds},
              {"aborted", r.aborted},
              {"abort_reason", r.abort_reason},
              {"frozen_unchanged", r.frozen_unchanged}}
      .dump(2);
}

RunRecord run_stage(const StageConfig& config, Model& model, const StageData& data,
                    const StageRunOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  config.validate();
  const VocabLayout& layout = model.layout();
  if (data.fixed.empty()) {
    data.options.validate(layout);
  } else {
    for (const TaskSample& s : data.fixed) validate_grid(s.target, layout);
  }
  RunRecord record;
  record.stages.push_back(config);

  std::vector<std::pair<std::string, uint64_t>> frozen;
  for (const auto& t : model.params().tensors()) {
    if (!config.trainable_groups.contains(t.group)) {
      frozen.emplace_back(t.name, tensor_hash(*t.value));
    }
  }

  double total_weight = 0.0;
  for (const auto& [task, w] : config.task_mix) total_weight += w;
  std::vector<int64_t> drawn(kTaskKindCount, 0);
  AdamW optimizer(model.params());
  ModelParams<float> grads = model.params().zeros_like();

  for (int step = 0; step < config.steps; ++step) {
    std::vector<TrainingExample> batch;
    batch.reserve(static_cast<size_t>(config.batch_size));
    for (int b = 0; b < config.batch_size; ++b) {
      if (!data.fixed.empty()) {
        const size_t i = (static_cast<size_t>(step) * config.batch_size + b) % data.fixed.size();
        batch.push_back(make_training_example(model.config(), data.fixed[i]));
        continue;
      }
      Rng pick(mix64(config.seed, static_cast<uint64_t>(step), static_cast<uint64_t>(b)));
      double u = pick.uniform() * total_weight;
      TaskKind task = config.task_mix.back().first;
      for (const auto& [t, w] : config.task_mix) {
        if (u < w) {
          task = t;
          break;
        }
        u -= w;
      }
      const auto k = static_cast<size_t>(task);
      const TaskSample s = gen_task_sample(
          layout, task, mix64(config.seed, static_cast<uint64_t>(config.stage), k), drawn[k]++,
          data.options);
      batch.push_back(make_training_example(model.config(), s));
    }
    int64_t tokens = 0;
    for (const auto& ex : batch) {
      for (TokenId t : ex.targets) tokens += t >= 0;
    }
    grads.set_zero();
    const JointLoss loss = model.loss_and_grad(
        batch, tokens > 0 ? 1.0f / static_cast<float>(tokens) : 0.0f, grads,
        config.trainable_groups);
    const double mean = tokens > 0 ? loss.total / static_cast<double>(tokens) : 0.0;
    record.losses.push_back(mean);
    if (!std::isfinite(mean)) {
      record.aborted = true;
      record.abort_reason = "non-finite loss at step " + std::to_string(step);
      break;
    }
    const double lr = learning_rate(config, step);
    optimizer.step(model.params(), grads, config, lr);
    if (options.on_step) options.on_step(step, mean, lr);
  }

  size_t fi = 0;
  for (const auto& t : model.params().tensors()) {
    if (config.trainable_groups.contains(t.group)) continue;
    if (frozen[fi].first != t.name || frozen[fi].second != tensor_hash(*t.value)) {
      record.frozen_unchanged = false;
    }
    ++fi;
  }
  if (!record.frozen_unchanged) throw RuntimeFailure("a frozen parameter group changed");

  record.lineage = options.parent.lineage;
  record.lineage.push_back({config.stage, params_hash(model.params())});
  if (!options.checkpoint_path.empty()) {
    save_checkpoint(options.checkpoint_path, model, CheckpointMeta{config.stage, record.lineage});
  }
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return record;
}

bool exact_match(const Model& model, const TaskSample& sample) {
  const VocabLayout& layout = model.layout();
  if (sample.input.task == TaskKind::kInterrupt) {
    ModelDetector detector(model);
    for (int t = 0; t < sample.target.length(); ++t) {
      const Status s = detector.ingest({sample.input.audio[t], t});
      const TokenId id = control_id(
          layout, {s == Status::kIrq ? ControlKind::kIrq : ControlKind::kNirq, 0});
      if (id != sample.target.at(0, t)) return false;
    }
    return true;
  }
  const InputPlan plan = sample_plan(layout, sample.input);
  const EffectiveInputSequence prefix =
      prefix_input(model, plan, vision_features(model.config(), sample.input),
                   audio_features(model.config(), sample.input));
  GenerationLimits limits;
  limits.max_steps = sample.target.length() + layout.row_count() + 2;
  limits.audio_output = task_emits_audio(sample.input.task);
  const GenerationResult r = generate(model, prefix, limits, 0);
  return !r.truncated && r.grid == sample.target;
}

std::map<std::string, TaskMetrics> evaluate(const Model& model,
                                            const std::vector<Dataset>& datasets) {
  const VocabLayout& layout = model.layout();
  std::map<std::string, TaskMetrics> out;
  for (const Dataset& d : datasets) {
    if (!(d.layout == layout)) {
      throw InvalidArgument("dataset layout does not match the checkpoint layout");
    }
    const int rows = layout.row_count();
    int64_t cells = 0;
    int64_t correct = 0;
    int matched = 0;
    for (const TaskSample& s : d.samples) {
      const TrainingExample ex = make_training_example(model.config(), s);
      const std::vector<MatF> logits = model.forward(model.embed(ex));
      for (int t = 0; t < ex.plan.length(); ++t) {
        for (int r = 0; r < rows; ++r) {
          const TokenId target = ex.targets[static_cast<size_t>(t) * rows + r];
          if (target < 0) continue;
          Eigen::Index best = 0;
          logits[r].row(t).maxCoeff(&best);
          ++cells;
          correct += best == target - layout.region_offset(r);
        }
      }
      matched += exact_match(model, s);
    }
    TaskMetrics& m = out[std::string(task_name(d.task.kind))];
    m.samples = static_cast<int>(d.samples.size());
    m.next_token_accuracy = cells > 0 ? static_cast<double>(correct) / cells : 0.0;
    m.exact_match = m.samples > 0 ? static_cast<double>(matched) / m.samples : 0.0;
  }
  return out;
}

std::string metrics_to_json(const std::map<std::string, TaskMetrics>& metrics) {
  Json j = Json::object();
  for (const auto& [name, m] : metrics) {
    j[name] = {{"next_token_accuracy", m.next_token_accuracy},
               {"sequence_exact_match", m.exact_match},
               {"samples", m.samples}};
  }
  return j.dump();
}

}  // namespace omni
