// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/generate.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "omni/error.h"

namespace omni {

EffectiveInputSequence prefix_input(const Model& model, const InputPlan& plan,
                                    const std::optional<FeatureSequence>& vision,
                                    const std::optional<FeatureSequence>& audio) {
  MatF v, a;
  if (vision) v = model.project(*vision);
  if (audio) a = model.project(*audio);
  EffectiveInputSequence out;
  out.steps = realize_plan<float>(model.layout(), model.embedding_tables(), plan,
                                  vision ? &v : nullptr, audio ? &a : nullptr);
  for (const InputStep& s : plan.steps) out.provenance.push_back(s.source);
  return out;
}

Sampler::Sampler(const SamplingConfig& config, uint64_t seed)
    : config_(config), rng_(seed) {}

int32_t Sampler::pick(const Eigen::Ref<const RowVec<float>>& logits) {
  const Eigen::Index n = logits.size();
  if (config_.greedy) {
    Eigen::Index best = 0;
    logits.maxCoeff(&best);
    return static_cast<int32_t>(best);
  }
  std::vector<int32_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  const Eigen::Index k = config_.top_k > 0 ? std::min<Eigen::Index>(config_.top_k, n) : n;
  std::partial_sort(idx.begin(), idx.begin() + k, idx.end(),
                    [&](int32_t a, int32_t b) {
                      return logits(a) > logits(b) || (logits(a) == logits(b) && a < b);
                    });
  const double top = logits(idx[0]);
  std::vector<double> w(k);
  double sum = 0.0;
  for (Eigen::Index i = 0; i < k; ++i) {
    w[i] = std::exp((logits(idx[i]) - top) / config_.temperature);
    sum += w[i];
  }
  double u = rng_.uniform() * sum;
  for (Eigen::Index i = 0; i < k; ++i) {
    u -= w[i];
    if (u < 0.0) return idx[i];
  }
  return idx[k - 1];
}

GenerationSession::GenerationSession(const Model& model,
                                     const EffectiveInputSequence& prefix,
                                     GenerationLimits limits, uint64_t seed)
    : model_(model),
      limits_(limits),
      sampler_(model.config().sampling, seed),
      state_(model.new_state()),
      ended_(model.layout().row_count(), false) {
  if (prefix.length() == 0) throw InvalidArgument("generation prefix is empty");
  if (limits_.max_steps < 1) throw InvalidArgument("max_steps must be at least 1");
  logits_ = model_.decode(state_, prefix.steps);
  for (auto& l : logits_) {
    const MatF last = l.bottomRows(1);
    l = last;
  }
}

std::vector<TokenId> GenerationSession::propose() {
  if (finished_) throw RuntimeFailure("generation session already finished");
  const VocabLayout& layout = model_.layout();
  const int rows = layout.row_count();
  const int t = steps();
  std::vector<TokenId> column(rows);
  for (int r = 0; r < rows; ++r) {
    const bool active = r == 0 || (limits_.audio_output && t >= r);
    if (!active || ended_[r]) {
      column[r] = pad_id(layout, r);
      continue;
    }
    column[r] = layout.region_offset(r) + sampler_.pick(logits_[r].row(0));
  }
  return column;
}

void GenerationSession::commit(const std::vector<TokenId>& column) {
  if (finished_) throw RuntimeFailure("generation session already finished");
  const VocabLayout& layout = model_.layout();
  const int rows = layout.row_count();
  if (static_cast<int>(column.size()) != rows) {
    throw InvalidArgument("column has the wrong number of rows");
  }
  columns_.push_back(column);
  for (int r = 0; r < rows; ++r) {
    if (column[r] == end_id(layout, r)) ended_[r] = true;
  }
  bool done = ended_[0];
  if (limits_.audio_output) {
    for (int r = 1; r < rows; ++r) done = done && ended_[r];
  }
  if (done || steps() >= limits_.max_steps) {
    finished_ = true;
    truncated_ = !done;
    return;
  }
  const MatF x = model_.embed_column(column);
  logits_ = model_.decode(state_, x);
}

std::vector<TokenId> GenerationSession::step() {
  std::vector<TokenId> column = propose();
  commit(column);
  return column;
}

GenerationResult GenerationSession::result() const {
  return grid_from_columns(model_.layout(), columns_, truncated_);
}

GenerationResult grid_from_columns(const VocabLayout& layout,
                                   std::vector<std::vector<TokenId>> columns,
                                   bool truncated) {
  const int rows = layout.row_count();
  const int lag = rows - 1;
  int source = 0;
  for (size_t c = 0; c < columns.size(); ++c) {
    for (int r = 0; r < rows; ++r) {
      if (columns[c][r] != pad_id(layout, r)) {
        source = std::max(source, static_cast<int>(c) - r + 1);
      }
    }
  }
  TokenGrid raw(rows, source + lag);
  for (int r = 0; r < rows; ++r) {
    const TokenId pad = pad_id(layout, r);
    for (int c = 0; c < raw.length(); ++c) {
      raw.at(r, c) = c < static_cast<int>(columns.size()) ? columns[c][r] : pad;
    }
  }
  GenerationResult out;
  out.columns = std::move(columns);
  out.delayed = DelayedGrid(layout, std::move(raw));
  out.grid = undo_delay(out.delayed);
  out.truncated = truncated;
  return out;
}

GenerationResult generate(const Model& model, const EffectiveInputSequence& prefix,
                          GenerationLimits limits, uint64_t seed) {
  GenerationSession session(model, prefix, limits, seed);
  while (!session.finished()) session.step();
  return session.result();
}

BatchParallelResult batch_parallel_generate(const Model& model,
                                            const EffectiveInputSequence& a_prefix,
                                            const EffectiveInputSequence& b_prefix,
                                            GenerationLimits limits,
                                            const BatchParallelOptions& options,
                                            uint64_t seed) {
  if (a_prefix.length() != b_prefix.length()) {
    throw InvalidArgument("batch-parallel prefixes differ in length (" +
                          std::to_string(a_prefix.length()) + " vs " +
                          std::to_string(b_prefix.length()) + ")");
  }
  GenerationLimits a_limits = limits;
  a_limits.audio_output = true;
  GenerationLimits b_limits = limits;
  b_limits.audio_output = options.b_audio_output;
  GenerationSession a(model, a_prefix, a_limits, seed);
  GenerationSession b(model, b_prefix, b_limits, seed);
  BatchParallelResult out;
  const TokenId text_pad = pad_id(model.layout(), 0);
  while (!a.finished()) {
    TokenId text = text_pad;
    if (!b.finished()) {
      std::vector<TokenId> b_col = b.propose();
      if (options.text_override) b_col[0] = options.text_override(b.steps(), b_col[0]);
      b.commit(b_col);
      text = b_col[0];
    }
    if (options.record_logits) out.a_logits.push_back(a.logits());
    std::vector<TokenId> a_col = a.propose();
    a_col[0] = text;
    a.commit(a_col);
  }
  while (!b.finished()) b.step();
  out.a = a.result();
  out.b = b.result();
  out.grid = out.a.grid;
  return out;
}

}  // namespace omni
