// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/grad_check.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omni/error.h"
#include "omni/rng.h"

namespace omni {

ModelConfig toy_model_config() {
  ModelConfig c;
  c.d_model = 8;
  c.n_trunk_layers = 1;
  c.n_attn_heads = 2;
  c.context_length = 64;
  c.adapter_hidden = 6;
  c.vision_feature_width = 5;
  c.audio_feature_width = 5;
  c.vocab = make_layout(24, 2, 8, 5);
  c.validate();
  return c;
}

TrainingExample tiny_instance(const ModelConfig& config, uint64_t seed, int max_length) {
  const VocabLayout& layout = config.vocab;
  Rng rng(seed);
  TrainingExample ex;
  const int audio_len = static_cast<int>(rng.range(1, 3));
  FeatureSequence audio{Modality::kAudio, MatF(audio_len, config.audio_feature_width)};
  for (Eigen::Index i = 0; i < audio.vectors.size(); ++i) {
    audio.vectors.data()[i] = static_cast<float>(rng.normal());
  }
  std::vector<TokenId> text;
  const int text_len = static_cast<int>(rng.range(0, 2));
  for (int i = 0; i < text_len; ++i) {
    text.push_back(static_cast<TokenId>(rng.below(layout.text_region_size)));
  }
  // Random marker ids so every embedding row gets gradient.
  InputPlan plan = plan_input(layout, 0, audio_len, text, TaskKind::kAsr);
  for (int r = 0; r < layout.row_count(); ++r) {
    plan.steps.back().column[r] =
        global_id(layout, r, static_cast<int32_t>(rng.below(layout.region_width(r))));
  }
  ex.plan = std::move(plan);
  ex.audio = std::move(audio);

  const int steps = static_cast<int>(rng.range(1, max_length));
  for (int j = 0; j < steps - 1; ++j) {
    InputStep s;
    s.source = StepSource::kTokenColumn;
    for (int r = 0; r < layout.row_count(); ++r) {
      s.column.push_back(
          global_id(layout, r, static_cast<int32_t>(rng.below(layout.region_width(r)))));
    }
    ex.plan.steps.push_back(std::move(s));
  }
  const int rows = layout.row_count();
  ex.targets.assign(static_cast<size_t>(ex.plan.length()) * rows, -1);
  const int first = ex.plan.length() - steps;
  for (int t = first; t < ex.plan.length(); ++t) {
    for (int r = 0; r < rows; ++r) {
      if (rng.uniform() < 0.8) {
        ex.targets[static_cast<size_t>(t) * rows + r] =
            global_id(layout, r, static_cast<int32_t>(rng.below(layout.region_width(r))));
      }
    }
  }
  return ex;
}

GradCheckResult grad_check(const OmniModel<double>& model, const TrainingExample& example,
                           const GradCheckOptions& options) {
  if (options.step <= 0.0) throw InvalidArgument("grad_check step must be positive");
  OmniModel<double> probe(model.config(), model.params());
  ModelParams<double> grads = probe.params().zeros_like();
  const std::span<const TrainingExample> batch(&example, 1);
  probe.loss_and_grad(batch, 1.0, grads, GroupMask::all());

  Rng rng(options.seed);
  GradCheckResult result;
  auto values = probe.params().tensors();
  const auto analytic = grads.tensors();
  for (size_t ti = 0; ti < values.size(); ++ti) {
    MatD& value = *values[ti].value;
    const MatD& grad = *analytic[ti].value;
    const auto n = static_cast<int64_t>(value.size());
    std::vector<int64_t> order(static_cast<size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    const int top = static_cast<int>(std::min<int64_t>(options.per_tensor, n));
    std::partial_sort(order.begin(), order.begin() + top, order.end(),
                      [&](int64_t a, int64_t b) {
                        return std::abs(grad.data()[a]) > std::abs(grad.data()[b]);
                      });
    std::vector<int64_t> picks(order.begin(), order.begin() + top);
    for (int i = 0; i < options.per_tensor; ++i) {
      picks.push_back(static_cast<int64_t>(rng.below(static_cast<uint64_t>(n))));
    }
    for (int64_t idx : picks) {
      double& w = value.data()[idx];
      const double saved = w;
      w = saved + options.step;
      const double up = probe.loss(example).total;
      w = saved - options.step;
      const double down = probe.loss(example).total;
      w = saved;
      const double numeric = (up - down) / (2.0 * options.step);
      const double a = grad.data()[idx];
      const double denom = std::max({std::abs(a), std::abs(numeric), options.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++result.checked;
      if (rel > result.max_relative_error || result.worst_tensor.empty()) {
        result.max_relative_error = std::max(rel, result.max_relative_error);
        if (rel >= result.max_relative_error) result.worst_tensor = values[ti].name;
      }
    }
  }
  return result;
}

}  // namespace omni
