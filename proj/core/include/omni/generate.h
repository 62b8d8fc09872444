// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_GENERATE_H_
#define OMNI_GENERATE_H_

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include "omni/assembly.h"
#include "omni/delay_grid.h"
#include "omni/model.h"
#include "omni/rng.h"

namespace omni {

struct GenerationLimits {
  int max_steps = 256;
  bool audio_output = true;
};

struct GenerationResult {
  std::vector<std::vector<TokenId>> columns;  // as emitted, one per step
  DelayedGrid delayed;
  TokenGrid grid;
  bool truncated = false;
};

// Effective input of a prefix: adapters applied to raw features, then the
// averaging rule over the plan.
EffectiveInputSequence prefix_input(const Model& model, const InputPlan& plan,
                                    const std::optional<FeatureSequence>& vision,
                                    const std::optional<FeatureSequence>& audio);

class Sampler {
 public:
  Sampler(const SamplingConfig& config, uint64_t seed);
  int32_t pick(const Eigen::Ref<const RowVec<float>>& logits);

 private:
  SamplingConfig config_;
  Rng rng_;
};

// One streaming decode: each step emits an 8-token column (text plus every
// audio layer). Audio row k is PAD for the first k steps; a row that emitted
// its end token (TEXT_EOS / AUDIO_EOA) is PAD afterwards. The session ends when
// every active row has ended or max_steps columns were emitted.
class GenerationSession {
 public:
  GenerationSession(const Model& model, const EffectiveInputSequence& prefix,
                    GenerationLimits limits, uint64_t seed);

  bool finished() const { return finished_; }
  int steps() const { return static_cast<int>(columns_.size()); }

  // Logits the next column will be drawn from.
  const std::vector<MatF>& logits() const { return logits_; }

  // The next column under the forcing rules, without committing it.
  std::vector<TokenId> propose();

  // Records a column and feeds it back as the next input.
  void commit(const std::vector<TokenId>& column);

  std::vector<TokenId> step();

  // Columns emitted so far, as a delayed grid plus its aligned form.
  GenerationResult result() const;

 private:
  const Model& model_;
  GenerationLimits limits_;
  Sampler sampler_;
  Model::DecodeState state_;
  std::vector<MatF> logits_;
  std::vector<std::vector<TokenId>> columns_;
  std::vector<bool> ended_;
  bool finished_ = false;
  bool truncated_ = false;
};

// Builds the delayed grid (and its aligned form) from emitted columns; the
// source length is the last non-PAD position over all rows.
GenerationResult grid_from_columns(const VocabLayout& layout,
                                   std::vector<std::vector<TokenId>> columns,
                                   bool truncated);

GenerationResult generate(const Model& model, const EffectiveInputSequence& prefix,
                          GenerationLimits limits, uint64_t seed = 0);

struct BatchParallelOptions {
  // B's request; text-only unless set, in which case B also emits audio.
  bool b_audio_output = false;
  // Replaces B's text token at a step before it is committed to both samples.
  std::function<TokenId(int step, TokenId proposed)> text_override;
  bool record_logits = false;
};

struct BatchParallelResult {
  TokenGrid grid;  // text row from B, audio rows from A
  GenerationResult a;
  GenerationResult b;
  std::vector<std::vector<MatF>> a_logits;  // per step, when recorded
};

// Two-sample decoding: A answers in text+audio, B in text only. At each step
// B's text token replaces A's text slot before A's column is fed back.
// Throws InvalidArgument if the prefixes differ in length.
BatchParallelResult batch_parallel_generate(const Model& model,
                                            const EffectiveInputSequence& a_prefix,
                                            const EffectiveInputSequence& b_prefix,
                                            GenerationLimits limits,
                                            const BatchParallelOptions& options = {},
                                            uint64_t seed = 0);

}  // namespace omni

#endif  // OMNI_GENERATE_H_
