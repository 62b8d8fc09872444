// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_MODEL_H_
#define OMNI_MODEL_H_

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "omni/assembly.h"
#include "omni/delay_grid.h"
#include "omni/features.h"
#include "omni/tensor.h"
#include "omni/vocab.h"

namespace omni {

struct SamplingConfig {
  bool greedy = true;
  float temperature = 0.8f;
  int top_k = 40;
};

struct ModelConfig {
  int d_model = 128;
  int n_trunk_layers = 4;
  int n_attn_heads = 4;
  int context_length = 512;
  int ffn_hidden = 0;       // 0: round(8/3 * d_model)
  int adapter_hidden = 0;   // 0: 4,864 scaled by d_model / 896
  int vision_feature_width = 768;
  int audio_feature_width = 768;
  float rope_base = 10000.0f;
  float norm_eps = 1e-5f;
  VocabLayout vocab = default_layout();
  SamplingConfig sampling;

  int resolved_ffn_hidden() const;
  int resolved_adapter_hidden() const;
  int head_width(int row) const { return vocab.region_width(row); }
  // Throws InvalidArgument on an inconsistent configuration.
  void validate() const;
};

// Trunk width of the reference 0.5B language model that adapter widths scale from.
inline constexpr int kReferenceModelWidth = 896;
inline constexpr int kReferenceAdapterHidden = 4864;

// d_model 128, 4 layers, 4 heads, context 512 over the desk layout.
ModelConfig desk_model_config();

// The 0.5B reference trunk (896 wide, 24 layers, 14 heads) over the full
// layout. Far beyond desk hardware; used for shape and size checks.
ModelConfig paper_model_config();

enum class ParamGroup : unsigned char { kAdapters, kTrunk, kEmbeddings, kHeads };

inline constexpr ParamGroup kAllGroups[] = {ParamGroup::kAdapters, ParamGroup::kTrunk,
                                            ParamGroup::kEmbeddings, ParamGroup::kHeads};

std::string_view group_name(ParamGroup group);
std::optional<ParamGroup> parse_group(std::string_view name);

class GroupMask {
 public:
  constexpr GroupMask() = default;
  constexpr GroupMask(std::initializer_list<ParamGroup> groups) {
    for (ParamGroup g : groups) bits_ |= bit(g);
  }
  static constexpr GroupMask all() {
    return {ParamGroup::kAdapters, ParamGroup::kTrunk, ParamGroup::kEmbeddings,
            ParamGroup::kHeads};
  }
  constexpr bool contains(ParamGroup g) const { return (bits_ & bit(g)) != 0; }
  constexpr bool empty() const { return bits_ == 0; }
  friend constexpr bool operator==(GroupMask, GroupMask) = default;

 private:
  static constexpr unsigned bit(ParamGroup g) { return 1u << static_cast<unsigned>(g); }
  unsigned bits_ = 0;
};

template <typename T>
struct BlockWeights {
  Mat<T> attn_norm;  // 1 x D
  Mat<T> wq, wk, wv, wo;
  Mat<T> mlp_norm;   // 1 x D
  Mat<T> w_gate, w_up, w_down;
};

template <typename T>
struct TensorRef {
  std::string name;
  ParamGroup group;
  Mat<T>* value;
};

template <typename T>
struct ConstTensorRef {
  std::string name;
  ParamGroup group;
  const Mat<T>* value;
};

// All trainable tensors. The four groups partition them.
template <typename T>
struct ModelParams {
  AdapterWeights<T> vision_adapter;
  AdapterWeights<T> audio_adapter;
  std::vector<BlockWeights<T>> blocks;
  Mat<T> final_norm;                // 1 x D
  std::vector<Mat<T>> embeddings;   // per grid row: region width x D
  std::vector<Mat<T>> heads;        // per grid row: D x region width

  // Stable order; names are checkpoint keys.
  std::vector<TensorRef<T>> tensors();
  std::vector<ConstTensorRef<T>> tensors() const;

  ModelParams zeros_like() const;
  void set_zero();
  int64_t parameter_count() const;

  template <typename U>
  ModelParams<U> cast() const;
};

// Symbolic training example: the input plan, raw encoder features for any
// feature steps, and per-step targets (steps x rows global ids, -1 = none).
// The target at step t is what the model should predict after reading step t.
struct TrainingExample {
  InputPlan plan;
  std::optional<FeatureSequence> vision;
  std::optional<FeatureSequence> audio;
  std::vector<TokenId> targets;
};

// Teacher forcing over a delayed grid: after the prefix (which ends with the
// response marker) the input is column j and the target column j+1; the marker
// step predicts column 0. Cells outside mask have no target.
TrainingExample teacher_forced_example(const VocabLayout& layout, InputPlan prefix,
                                       std::optional<FeatureSequence> vision,
                                       std::optional<FeatureSequence> audio,
                                       const DelayedGrid& delayed,
                                       const CellMask& mask);

// Summed negative log-likelihood per grid row; total is their sum.
struct JointLoss {
  double total = 0.0;
  std::vector<double> per_layer;
  std::vector<int64_t> token_counts;

  int64_t tokens() const;
};

// Causal decoder: per-row embedding tables averaged into one input vector per
// step, a pre-norm rotary attention / gated MLP trunk, and one output head per
// grid row (text region, then each audio layer region).
template <typename T>
class OmniModel {
 public:
  OmniModel(const ModelConfig& config, uint64_t seed);
  OmniModel(const ModelConfig& config, ModelParams<T> params);

  const ModelConfig& config() const { return config_; }
  const VocabLayout& layout() const { return config_.vocab; }
  ModelParams<T>& params() { return params_; }
  const ModelParams<T>& params() const { return params_; }
  std::span<const Mat<T>> embedding_tables() const { return params_.embeddings; }

  // Adapter projection of raw encoder features to d_model.
  Mat<T> project(const FeatureSequence& raw) const;

  // Mean of the row embeddings of one token column.
  RowVec<T> embed_column(std::span<const TokenId> column) const;

  // Effective input of a training example (adapters applied).
  Mat<T> embed(const TrainingExample& example) const;

  // One logits matrix per grid row, length x region width. Throws
  // InvalidArgument when the input exceeds the context length.
  std::vector<Mat<T>> forward(const Mat<T>& input) const;

  JointLoss loss(const TrainingExample& example) const;

  // Loss over a batch plus gradients of scale * total for the trainable
  // groups, accumulated into grads. Frozen groups' gradients are untouched.
  JointLoss loss_and_grad(std::span<const TrainingExample> batch, T scale,
                          ModelParams<T>& grads, GroupMask trainable) const;

  // Rotated keys and values of every position seen so far.
  struct DecodeState {
    std::vector<Mat<T>> keys;
    std::vector<Mat<T>> values;
    int length = 0;
  };
  DecodeState new_state() const;
  // Appends steps to the state and returns logits for the new positions.
  std::vector<Mat<T>> decode(DecodeState& state, const Mat<T>& steps) const;

 private:
  struct Cache;
  void init_rope();

  ModelConfig config_;
  ModelParams<T> params_;
  Mat<T> rope_cos_;  // context x head_dim/2
  Mat<T> rope_sin_;
};

extern template class OmniModel<float>;
extern template class OmniModel<double>;
extern template struct ModelParams<float>;
extern template struct ModelParams<double>;

using Model = OmniModel<float>;

}  // namespace omni

#endif  // OMNI_MODEL_H_
