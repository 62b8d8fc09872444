// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/model.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "omni/error.h"
#include "omni/rng.h"

namespace omni {
namespace {

template <typename T>
using ColVec = Eigen::Matrix<T, Eigen::Dynamic, 1>;

template <typename T>
T sigmoid(T x) {
  return T(1) / (T(1) + std::exp(-x));
}

template <typename T>
void rms_forward(const Mat<T>& x, const Mat<T>& gain, T eps, Mat<T>& y,
                 ColVec<T>& inv) {
  const Eigen::Index n = x.rows();
  const T d = static_cast<T>(x.cols());
  y.resize(n, x.cols());
  inv.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    inv(i) = T(1) / std::sqrt(x.row(i).squaredNorm() / d + eps);
    y.row(i) = x.row(i).cwiseProduct(gain) * inv(i);
  }
}

// dx = d(rmsnorm)/dx applied to dy; accumulates the gain gradient if asked.
template <typename T>
void rms_backward(const Mat<T>& x, const ColVec<T>& inv, const Mat<T>& gain,
                  const Mat<T>& dy, Mat<T>& dx, Mat<T>* dgain) {
  const T d = static_cast<T>(x.cols());
  dx.resize(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const RowVec<T> xhat = x.row(i) * inv(i);
    if (dgain != nullptr) *dgain += dy.row(i).cwiseProduct(xhat);
    const RowVec<T> dxhat = dy.row(i).cwiseProduct(gain);
    dx.row(i) = inv(i) * (dxhat - xhat * (dxhat.dot(xhat) / d));
  }
}

// Rotate-half rotary embedding on rows [row0, row0 + len) at positions
// pos0.. ; inverse applies the transpose rotation (used for gradients).
template <typename T>
void rope_apply(Mat<T>& m, Eigen::Index row0, Eigen::Index len, int pos0,
                int heads, int head_dim, const Mat<T>& cos, const Mat<T>& sin,
                bool inverse) {
  const int half = head_dim / 2;
  for (Eigen::Index i = 0; i < len; ++i) {
    const int p = pos0 + static_cast<int>(i);
    T* row = m.data() + (row0 + i) * m.cols();
    for (int h = 0; h < heads; ++h) {
      T* base = row + h * head_dim;
      for (int j = 0; j < half; ++j) {
        const T c = cos(p, j);
        const T s = inverse ? -sin(p, j) : sin(p, j);
        const T a = base[j];
        const T b = base[j + half];
        base[j] = a * c - b * s;
        base[j + half] = a * s + b * c;
      }
    }
  }
}

// In-place causal softmax of a score block whose row i may see columns
// [0, visible0 + i].
template <typename T>
void causal_softmax(Mat<T>& s, Eigen::Index visible0) {
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const Eigen::Index last = visible0 + i;
    T mx = -std::numeric_limits<T>::infinity();
    for (Eigen::Index j = 0; j <= last; ++j) mx = std::max(mx, s(i, j));
    T sum = 0;
    for (Eigen::Index j = 0; j <= last; ++j) {
      s(i, j) = std::exp(s(i, j) - mx);
      sum += s(i, j);
    }
    const T inv = T(1) / sum;
    for (Eigen::Index j = 0; j <= last; ++j) s(i, j) *= inv;
    for (Eigen::Index j = last + 1; j < s.cols(); ++j) s(i, j) = 0;
  }
}

template <typename T>
void fill_normal(Mat<T>& m, Eigen::Index rows, Eigen::Index cols, double std,
                 Rng& rng) {
  m.resize(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    m.data()[i] = static_cast<T>(rng.normal() * std);
  }
}

template <typename T>
Mat<T> ones_row(Eigen::Index d) {
  return Mat<T>::Ones(1, d);
}

template <typename T>
struct AdapterCache {
  Mat<T> raw;
  Mat<T> gate;
  Mat<T> up;
  Mat<T> hidden;
  Mat<T> out;
};

template <typename T>
void adapter_forward(const AdapterWeights<T>& w, const FeatureSequence& raw,
                     AdapterCache<T>& c) {
  if (raw.width() != w.input_width()) {
    throw InvalidArgument("feature width " + std::to_string(raw.width()) +
                          " does not match adapter input width " +
                          std::to_string(w.input_width()));
  }
  c.raw = raw.vectors.template cast<T>();
  c.gate.noalias() = c.raw * w.w_gate;
  c.up.noalias() = c.raw * w.w_up;
  c.hidden.resize(c.gate.rows(), c.gate.cols());
  for (Eigen::Index i = 0; i < c.gate.size(); ++i) {
    const T g = c.gate.data()[i];
    c.hidden.data()[i] = g * sigmoid(g) * c.up.data()[i];
  }
  c.out.noalias() = c.hidden * w.w_down;
}

template <typename T>
void adapter_backward(const AdapterWeights<T>& w, const AdapterCache<T>& c,
                      const Mat<T>& dout, AdapterWeights<T>& g) {
  g.w_down.noalias() += c.hidden.transpose() * dout;
  const Mat<T> dhidden = dout * w.w_down.transpose();
  Mat<T> dgate(c.gate.rows(), c.gate.cols());
  Mat<T> dup(c.gate.rows(), c.gate.cols());
  for (Eigen::Index i = 0; i < c.gate.size(); ++i) {
    const T x = c.gate.data()[i];
    const T sg = sigmoid(x);
    const T dh = dhidden.data()[i];
    dgate.data()[i] = dh * c.up.data()[i] * sg * (T(1) + x * (T(1) - sg));
    dup.data()[i] = dh * x * sg;
  }
  g.w_gate.noalias() += c.raw.transpose() * dgate;
  g.w_up.noalias() += c.raw.transpose() * dup;
}

template <typename P, typename F>
void visit_tensors(P& p, F&& f) {
  f(std::string("adapter.vision.w_gate"), ParamGroup::kAdapters, p.vision_adapter.w_gate);
  f(std::string("adapter.vision.w_up"), ParamGroup::kAdapters, p.vision_adapter.w_up);
  f(std::string("adapter.vision.w_down"), ParamGroup::kAdapters, p.vision_adapter.w_down);
  f(std::string("adapter.audio.w_gate"), ParamGroup::kAdapters, p.audio_adapter.w_gate);
  f(std::string("adapter.audio.w_up"), ParamGroup::kAdapters, p.audio_adapter.w_up);
  f(std::string("adapter.audio.w_down"), ParamGroup::kAdapters, p.audio_adapter.w_down);
  for (size_t i = 0; i < p.blocks.size(); ++i) {
    const std::string pre = "blocks." + std::to_string(i) + ".";
    auto& b = p.blocks[i];
    f(pre + "attn_norm", ParamGroup::kTrunk, b.attn_norm);
    f(pre + "wq", ParamGroup::kTrunk, b.wq);
    f(pre + "wk", ParamGroup::kTrunk, b.wk);
    f(pre + "wv", ParamGroup::kTrunk, b.wv);
    f(pre + "wo", ParamGroup::kTrunk, b.wo);
    f(pre + "mlp_norm", ParamGroup::kTrunk, b.mlp_norm);
    f(pre + "w_gate", ParamGroup::kTrunk, b.w_gate);
    f(pre + "w_up", ParamGroup::kTrunk, b.w_up);
    f(pre + "w_down", ParamGroup::kTrunk, b.w_down);
  }
  f(std::string("final_norm"), ParamGroup::kTrunk, p.final_norm);
  for (size_t r = 0; r < p.embeddings.size(); ++r) {
    f("embed." + std::to_string(r), ParamGroup::kEmbeddings, p.embeddings[r]);
  }
  for (size_t r = 0; r < p.heads.size(); ++r) {
    f("head." + std::to_string(r), ParamGroup::kHeads, p.heads[r]);
  }
}

}  // namespace

int ModelConfig::resolved_ffn_hidden() const {
  return ffn_hidden > 0 ? ffn_hidden
                        : static_cast<int>(std::lround(8.0 * d_model / 3.0));
}

int ModelConfig::resolved_adapter_hidden() const {
  if (adapter_hidden > 0) return adapter_hidden;
  return std::max(1, static_cast<int>(std::lround(
                         static_cast<double>(kReferenceAdapterHidden) * d_model /
                         kReferenceModelWidth)));
}

void ModelConfig::validate() const {
  if (d_model <= 0 || n_trunk_layers <= 0 || n_attn_heads <= 0 ||
      context_length <= 0) {
    throw InvalidArgument("model sizes must be positive");
  }
  if (d_model % n_attn_heads != 0) {
    throw InvalidArgument("d_model must be divisible by n_attn_heads");
  }
  if ((d_model / n_attn_heads) % 2 != 0) {
    throw InvalidArgument("attention head width must be even for rotary encoding");
  }
  if (vision_feature_width <= 0 || audio_feature_width <= 0) {
    throw InvalidArgument("feature widths must be positive");
  }
  if (sampling.temperature <= 0.0f || sampling.top_k < 0) {
    throw InvalidArgument("invalid sampling configuration");
  }
}

ModelConfig desk_model_config() {
  ModelConfig c;
  c.d_model = 128;
  c.n_trunk_layers = 4;
  c.n_attn_heads = 4;
  c.context_length = 512;
  c.vision_feature_width = 64;
  c.audio_feature_width = 64;
  c.vocab = desk_layout();
  return c;
}

ModelConfig paper_model_config() {
  ModelConfig c;
  c.d_model = kReferenceModelWidth;
  c.n_trunk_layers = 24;
  c.n_attn_heads = 14;
  c.context_length = 2048;
  c.ffn_hidden = kReferenceAdapterHidden;
  c.vocab = default_layout();
  return c;
}

std::string_view group_name(ParamGroup group) {
  switch (group) {
    case ParamGroup::kAdapters: return "adapters";
    case ParamGroup::kTrunk: return "trunk";
    case ParamGroup::kEmbeddings: return "embeddings";
    case ParamGroup::kHeads: return "heads";
  }
  return "unknown";
}

std::optional<ParamGroup> parse_group(std::string_view name) {
  for (ParamGroup g : kAllGroups) {
    if (group_name(g) == name) return g;
  }
  return std::nullopt;
}

template <typename T>
std::vector<TensorRef<T>> ModelParams<T>::tensors() {
  std::vector<TensorRef<T>> out;
  visit_tensors(*this, [&](std::string name, ParamGroup g, Mat<T>& m) {
    out.push_back({std::move(name), g, &m});
  });
  return out;
}

template <typename T>
std::vector<ConstTensorRef<T>> ModelParams<T>::tensors() const {
  std::vector<ConstTensorRef<T>> out;
  visit_tensors(*this, [&](std::string name, ParamGroup g, const Mat<T>& m) {
    out.push_back({std::move(name), g, &m});
  });
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::zeros_like() const {
  ModelParams<T> out = *this;
  out.set_zero();
  return out;
}

template <typename T>
void ModelParams<T>::set_zero() {
  for (auto& t : tensors()) t.value->setZero();
}

template <typename T>
int64_t ModelParams<T>::parameter_count() const {
  int64_t n = 0;
  for (const auto& t : tensors()) n += t.value->size();
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> out;
  out.blocks.resize(blocks.size());
  out.embeddings.resize(embeddings.size());
  out.heads.resize(heads.size());
  auto src = tensors();
  auto dst = out.tensors();
  for (size_t i = 0; i < src.size(); ++i) {
    *dst[i].value = src[i].value->template cast<U>();
  }
  return out;
}

TrainingExample teacher_forced_example(const VocabLayout& layout, InputPlan prefix,
                                       std::optional<FeatureSequence> vision,
                                       std::optional<FeatureSequence> audio,
                                       const DelayedGrid& delayed,
                                       const CellMask& mask) {
  if (!(delayed.layout() == layout)) {
    throw InvalidArgument("delayed grid layout differs from model layout");
  }
  if (mask.rows != delayed.rows() || mask.length != delayed.length()) {
    throw InvalidArgument("mask shape does not match the delayed grid");
  }
  if (prefix.steps.empty()) throw InvalidArgument("prefix is empty");
  const int rows = layout.row_count();
  const int prefix_len = prefix.length();
  const int cols = delayed.length();
  TrainingExample ex;
  ex.plan = std::move(prefix);
  for (int j = 0; j + 1 < cols; ++j) {
    ex.plan.steps.push_back({StepSource::kTokenColumn, -1, step_slice(delayed, j)});
  }
  ex.vision = std::move(vision);
  ex.audio = std::move(audio);
  ex.targets.assign(static_cast<size_t>(ex.plan.length()) * rows, -1);
  for (int j = 0; j < cols; ++j) {
    const size_t step = static_cast<size_t>(prefix_len - 1 + j);
    for (int r = 0; r < rows; ++r) {
      if (mask.at(r, j)) ex.targets[step * rows + r] = delayed.at(r, j);
    }
  }
  return ex;
}

int64_t JointLoss::tokens() const {
  int64_t n = 0;
  for (int64_t c : token_counts) n += c;
  return n;
}

template <typename T>
struct OmniModel<T>::Cache {
  struct Block {
    Mat<T> x_in;
    ColVec<T> inv1;
    Mat<T> h1, q, k, v;
    std::vector<Mat<T>> probs;  // segment-major, then head
    Mat<T> attn;
    Mat<T> x_mid;
    ColVec<T> inv2;
    Mat<T> h2, gate, up, act;
  };
  struct Example {
    AdapterCache<T> vision;
    AdapterCache<T> audio;
    bool has_vision = false;
    bool has_audio = false;
  };
  std::vector<std::pair<Eigen::Index, Eigen::Index>> segments;  // start, len
  std::vector<Example> examples;
  std::vector<Block> blocks;
  Mat<T> x_out;
  ColVec<T> inv_final;
  Mat<T> hf;
};

template <typename T>
OmniModel<T>::OmniModel(const ModelConfig& config, uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const int d = config_.d_model;
  const int ffn = config_.resolved_ffn_hidden();
  const int ad = config_.resolved_adapter_hidden();
  const double res_std = 0.02 / std::sqrt(2.0 * config_.n_trunk_layers);
  auto init_adapter = [&](AdapterWeights<T>& a, int in) {
    fill_normal(a.w_gate, in, ad, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    fill_normal(a.w_up, in, ad, 1.0 / std::sqrt(static_cast<double>(in)), rng);
    fill_normal(a.w_down, ad, d, 0.02 / std::sqrt(static_cast<double>(ad)), rng);
  };
  init_adapter(params_.vision_adapter, config_.vision_feature_width);
  init_adapter(params_.audio_adapter, config_.audio_feature_width);
  params_.blocks.resize(config_.n_trunk_layers);
  for (auto& b : params_.blocks) {
    b.attn_norm = ones_row<T>(d);
    fill_normal(b.wq, d, d, 0.02, rng);
    fill_normal(b.wk, d, d, 0.02, rng);
    fill_normal(b.wv, d, d, 0.02, rng);
    fill_normal(b.wo, d, d, res_std, rng);
    b.mlp_norm = ones_row<T>(d);
    fill_normal(b.w_gate, d, ffn, 0.02, rng);
    fill_normal(b.w_up, d, ffn, 0.02, rng);
    fill_normal(b.w_down, ffn, d, res_std, rng);
  }
  params_.final_norm = ones_row<T>(d);
  const int rows = config_.vocab.row_count();
  params_.embeddings.resize(rows);
  params_.heads.resize(rows);
  for (int r = 0; r < rows; ++r) {
    fill_normal(params_.embeddings[r], config_.vocab.region_width(r), d, 0.02, rng);
  }
  for (int r = 0; r < rows; ++r) {
    fill_normal(params_.heads[r], d, config_.vocab.region_width(r), 0.02, rng);
  }
  init_rope();
}

template <typename T>
OmniModel<T>::OmniModel(const ModelConfig& config, ModelParams<T> params)
    : config_(config), params_(std::move(params)) {
  config_.validate();
  // Shape check against a freshly shaped parameter set.
  const int d = config_.d_model;
  const int rows = config_.vocab.row_count();
  if (static_cast<int>(params_.blocks.size()) != config_.n_trunk_layers ||
      static_cast<int>(params_.embeddings.size()) != rows ||
      static_cast<int>(params_.heads.size()) != rows) {
    throw InvalidArgument("parameter structure does not match config");
  }
  for (int r = 0; r < rows; ++r) {
    if (params_.embeddings[r].rows() != config_.vocab.region_width(r) ||
        params_.embeddings[r].cols() != d || params_.heads[r].rows() != d ||
        params_.heads[r].cols() != config_.vocab.region_width(r)) {
      throw InvalidArgument("embedding or head shape does not match config");
    }
  }
  for (const auto& b : params_.blocks) {
    if (b.wq.rows() != d || b.w_gate.cols() != config_.resolved_ffn_hidden()) {
      throw InvalidArgument("trunk shape does not match config");
    }
  }
  if (params_.vision_adapter.input_width() != config_.vision_feature_width ||
      params_.audio_adapter.input_width() != config_.audio_feature_width ||
      params_.vision_adapter.output_width() != d ||
      params_.audio_adapter.output_width() != d) {
    throw InvalidArgument("adapter shape does not match config");
  }
  init_rope();
}

template <typename T>
void OmniModel<T>::init_rope() {
  const int head_dim = config_.d_model / config_.n_attn_heads;
  const int half = head_dim / 2;
  rope_cos_.resize(config_.context_length, half);
  rope_sin_.resize(config_.context_length, half);
  for (int p = 0; p < config_.context_length; ++p) {
    for (int j = 0; j < half; ++j) {
      const double freq =
          std::pow(static_cast<double>(config_.rope_base), -2.0 * j / head_dim);
      rope_cos_(p, j) = static_cast<T>(std::cos(p * freq));
      rope_sin_(p, j) = static_cast<T>(std::sin(p * freq));
    }
  }
}

template <typename T>
Mat<T> OmniModel<T>::project(const FeatureSequence& raw) const {
  validate_features(raw);
  AdapterCache<T> c;
  adapter_forward(raw.modality == Modality::kVision ? params_.vision_adapter
                                                    : params_.audio_adapter,
                  raw, c);
  return c.out;
}

template <typename T>
RowVec<T> OmniModel<T>::embed_column(std::span<const TokenId> column) const {
  const VocabLayout& layout = config_.vocab;
  if (static_cast<int>(column.size()) != layout.row_count()) {
    throw InvalidArgument("token column has the wrong number of rows");
  }
  RowVec<T> out = RowVec<T>::Zero(config_.d_model);
  for (TokenId id : column) {
    const Coord c = locate(layout, id);
    out += params_.embeddings[c.layer].row(c.local);
  }
  return out / static_cast<T>(column.size());
}

template <typename T>
Mat<T> OmniModel<T>::embed(const TrainingExample& example) const {
  Mat<T> vision, audio;
  if (example.vision) vision = project(*example.vision);
  if (example.audio) audio = project(*example.audio);
  return realize_plan<T>(config_.vocab, params_.embeddings, example.plan,
                         example.vision ? &vision : nullptr,
                         example.audio ? &audio : nullptr);
}

template <typename T>
typename OmniModel<T>::DecodeState OmniModel<T>::new_state() const {
  DecodeState s;
  s.keys.assign(config_.n_trunk_layers, Mat<T>(config_.context_length, config_.d_model));
  s.values.assign(config_.n_trunk_layers, Mat<T>(config_.context_length, config_.d_model));
  return s;
}

template <typename T>
std::vector<Mat<T>> OmniModel<T>::decode(DecodeState& state, const Mat<T>& steps) const {
  const int n = static_cast<int>(steps.rows());
  if (steps.cols() != config_.d_model) {
    throw InvalidArgument("input width does not match d_model");
  }
  if (state.length + n > config_.context_length) {
    throw InvalidArgument("input of " + std::to_string(state.length + n) +
                          " steps exceeds context length " +
                          std::to_string(config_.context_length));
  }
  const int heads = config_.n_attn_heads;
  const int hd = config_.d_model / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const T eps = static_cast<T>(config_.norm_eps);
  const int past = state.length;
  Mat<T> x = steps;
  Mat<T> h, q, k, v, attn(n, config_.d_model), gate, up;
  ColVec<T> inv;
  for (size_t l = 0; l < params_.blocks.size(); ++l) {
    const auto& w = params_.blocks[l];
    rms_forward(x, w.attn_norm, eps, h, inv);
    q.noalias() = h * w.wq;
    k.noalias() = h * w.wk;
    v.noalias() = h * w.wv;
    rope_apply(q, 0, n, past, heads, hd, rope_cos_, rope_sin_, false);
    rope_apply(k, 0, n, past, heads, hd, rope_cos_, rope_sin_, false);
    state.keys[l].middleRows(past, n) = k;
    state.values[l].middleRows(past, n) = v;
    const Eigen::Index total = past + n;
    for (int hh = 0; hh < heads; ++hh) {
      Mat<T> s = (q.middleCols(hh * hd, hd) *
                  state.keys[l].block(0, hh * hd, total, hd).transpose()) *
                 scale;
      causal_softmax(s, past);
      attn.middleCols(hh * hd, hd).noalias() =
          s * state.values[l].block(0, hh * hd, total, hd);
    }
    x.noalias() += attn * w.wo;
    rms_forward(x, w.mlp_norm, eps, h, inv);
    gate.noalias() = h * w.w_gate;
    up.noalias() = h * w.w_up;
    for (Eigen::Index i = 0; i < gate.size(); ++i) {
      const T g = gate.data()[i];
      gate.data()[i] = g * sigmoid(g) * up.data()[i];
    }
    x.noalias() += gate * w.w_down;
  }
  state.length += n;
  rms_forward(x, params_.final_norm, eps, h, inv);
  std::vector<Mat<T>> logits(params_.heads.size());
  for (size_t r = 0; r < params_.heads.size(); ++r) {
    logits[r].noalias() = h * params_.heads[r];
  }
  return logits;
}

template <typename T>
std::vector<Mat<T>> OmniModel<T>::forward(const Mat<T>& input) const {
  DecodeState state = new_state();
  return decode(state, input);
}

template <typename T>
JointLoss OmniModel<T>::loss(const TrainingExample& example) const {
  ModelParams<T> unused;
  return loss_and_grad(std::span<const TrainingExample>(&example, 1), T(1), unused,
                       GroupMask{});
}

template <typename T>
JointLoss OmniModel<T>::loss_and_grad(std::span<const TrainingExample> batch, T scale,
                                      ModelParams<T>& grads,
                                      GroupMask trainable) const {
  const VocabLayout& layout = config_.vocab;
  const int rows = layout.row_count();
  const int d = config_.d_model;
  const int heads = config_.n_attn_heads;
  const int hd = d / heads;
  const T attn_scale = T(1) / std::sqrt(static_cast<T>(hd));
  const T eps = static_cast<T>(config_.norm_eps);
  const bool any_grad = !trainable.empty();
  const bool train_trunk = trainable.contains(ParamGroup::kTrunk);
  const bool train_heads = trainable.contains(ParamGroup::kHeads);
  const bool train_embed = trainable.contains(ParamGroup::kEmbeddings);
  const bool train_adapt = trainable.contains(ParamGroup::kAdapters);
  const bool need_dx = train_trunk || train_embed || train_adapt;

  Cache cache;
  // Embedding: packed rows, one segment per example.
  Eigen::Index total = 0;
  for (const auto& ex : batch) {
    if (ex.plan.length() > config_.context_length) {
      throw InvalidArgument("example of " + std::to_string(ex.plan.length()) +
                            " steps exceeds context length");
    }
    if (ex.targets.size() != static_cast<size_t>(ex.plan.length()) * rows) {
      throw InvalidArgument("target table shape does not match the input plan");
    }
    cache.segments.push_back({total, ex.plan.length()});
    total += ex.plan.length();
  }
  const T inv_rows = T(1) / static_cast<T>(rows);
  Mat<T> x(total, d);
  cache.examples.resize(batch.size());
  for (size_t e = 0; e < batch.size(); ++e) {
    const TrainingExample& ex = batch[e];
    auto& ec = cache.examples[e];
    if (ex.vision) {
      adapter_forward(params_.vision_adapter, *ex.vision, ec.vision);
      ec.has_vision = true;
    }
    if (ex.audio) {
      adapter_forward(params_.audio_adapter, *ex.audio, ec.audio);
      ec.has_audio = true;
    }
    const Eigen::Index start = cache.segments[e].first;
    for (int t = 0; t < ex.plan.length(); ++t) {
      const InputStep& step = ex.plan.steps[t];
      auto row = x.row(start + t);
      const Coord mark = locate(layout, step.column.at(0));
      row = params_.embeddings[mark.layer].row(mark.local);
      if (step.source == StepSource::kVisionFeature ||
          step.source == StepSource::kAudioFeature) {
        const bool vis = step.source == StepSource::kVisionFeature;
        if (vis ? !ec.has_vision : !ec.has_audio) {
          throw InvalidArgument("feature step without features");
        }
        const Mat<T>& feats = vis ? ec.vision.out : ec.audio.out;
        if (step.feature_row < 0 || step.feature_row >= feats.rows()) {
          throw InvalidArgument("feature step row out of range");
        }
        row += static_cast<T>(rows - 1) * feats.row(step.feature_row);
      } else {
        if (static_cast<int>(step.column.size()) != rows) {
          throw InvalidArgument("token column has the wrong number of rows");
        }
        for (int r = 1; r < rows; ++r) {
          const Coord c = locate(layout, step.column[r]);
          row += params_.embeddings[c.layer].row(c.local);
        }
      }
      row *= inv_rows;
    }
  }

  // Trunk forward.
  cache.blocks.resize(params_.blocks.size());
  for (size_t l = 0; l < params_.blocks.size(); ++l) {
    const auto& w = params_.blocks[l];
    auto& b = cache.blocks[l];
    b.x_in = x;
    rms_forward(b.x_in, w.attn_norm, eps, b.h1, b.inv1);
    b.q.noalias() = b.h1 * w.wq;
    b.k.noalias() = b.h1 * w.wk;
    b.v.noalias() = b.h1 * w.wv;
    b.attn.resize(total, d);
    b.probs.clear();
    b.probs.reserve(cache.segments.size() * heads);
    for (const auto& [start, len] : cache.segments) {
      rope_apply(b.q, start, len, 0, heads, hd, rope_cos_, rope_sin_, false);
      rope_apply(b.k, start, len, 0, heads, hd, rope_cos_, rope_sin_, false);
      for (int h = 0; h < heads; ++h) {
        Mat<T> s = (b.q.block(start, h * hd, len, hd) *
                    b.k.block(start, h * hd, len, hd).transpose()) *
                   attn_scale;
        causal_softmax(s, 0);
        b.attn.block(start, h * hd, len, hd).noalias() =
            s * b.v.block(start, h * hd, len, hd);
        b.probs.push_back(std::move(s));
      }
    }
    b.x_mid = b.x_in;
    b.x_mid.noalias() += b.attn * w.wo;
    rms_forward(b.x_mid, w.mlp_norm, eps, b.h2, b.inv2);
    b.gate.noalias() = b.h2 * w.w_gate;
    b.up.noalias() = b.h2 * w.w_up;
    b.act.resize(b.gate.rows(), b.gate.cols());
    for (Eigen::Index i = 0; i < b.gate.size(); ++i) {
      const T g = b.gate.data()[i];
      b.act.data()[i] = g * sigmoid(g) * b.up.data()[i];
    }
    x = b.x_mid;
    x.noalias() += b.act * w.w_down;
  }
  cache.x_out = x;
  rms_forward(cache.x_out, params_.final_norm, eps, cache.hf, cache.inv_final);

  // Heads and loss.
  JointLoss result;
  result.per_layer.assign(rows, 0.0);
  result.token_counts.assign(rows, 0);
  Mat<T> dhf;
  if (any_grad && (need_dx || train_trunk)) dhf = Mat<T>::Zero(total, d);
  for (int r = 0; r < rows; ++r) {
    std::vector<Eigen::Index> pos;
    std::vector<int32_t> target;
    for (size_t e = 0; e < batch.size(); ++e) {
      const auto& ex = batch[e];
      const Eigen::Index start = cache.segments[e].first;
      for (int t = 0; t < ex.plan.length(); ++t) {
        const TokenId id = ex.targets[static_cast<size_t>(t) * rows + r];
        if (id < 0) continue;
        const Coord c = locate(layout, id);
        if (c.layer != r) {
          throw InvalidArgument("target " + std::to_string(id) +
                                " is not in layer " + std::to_string(r));
        }
        pos.push_back(start + t);
        target.push_back(c.local);
      }
    }
    if (pos.empty()) continue;
    const auto n = static_cast<Eigen::Index>(pos.size());
    Mat<T> hsel(n, d);
    for (Eigen::Index i = 0; i < n; ++i) hsel.row(i) = cache.hf.row(pos[i]);
    Mat<T> logits;
    logits.noalias() = hsel * params_.heads[r];
    double layer_loss = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      auto row = logits.row(i);
      const T mx = row.maxCoeff();
      T sum = 0;
      for (Eigen::Index j = 0; j < row.size(); ++j) sum += std::exp(row(j) - mx);
      const T lse = mx + std::log(sum);
      layer_loss += static_cast<double>(lse - row(target[i]));
      if (any_grad) {
        const T inv_sum = T(1) / sum;
        for (Eigen::Index j = 0; j < row.size(); ++j) {
          row(j) = std::exp(row(j) - mx) * inv_sum * scale;
        }
        row(target[i]) -= scale;
      }
    }
    result.per_layer[r] = layer_loss;
    result.token_counts[r] = n;
    if (!any_grad) continue;
    if (train_heads) grads.heads[r].noalias() += hsel.transpose() * logits;
    if (dhf.size() > 0) {
      const Mat<T> dh = logits * params_.heads[r].transpose();
      for (Eigen::Index i = 0; i < n; ++i) dhf.row(pos[i]) += dh.row(i);
    }
  }
  for (double v : result.per_layer) result.total += v;
  if (!any_grad || dhf.size() == 0) return result;

  // Trunk backward.
  Mat<T> dx, tmp;
  rms_backward(cache.x_out, cache.inv_final, params_.final_norm, dhf, dx,
               train_trunk ? &grads.final_norm : nullptr);
  for (size_t li = params_.blocks.size(); li-- > 0;) {
    const auto& w = params_.blocks[li];
    auto& g = grads.blocks[li];
    const auto& b = cache.blocks[li];
    // MLP.
    if (train_trunk) g.w_down.noalias() += b.act.transpose() * dx;
    Mat<T> dact;
    dact.noalias() = dx * w.w_down.transpose();
    Mat<T> dgate(dact.rows(), dact.cols());
    Mat<T> dup(dact.rows(), dact.cols());
    for (Eigen::Index i = 0; i < dact.size(); ++i) {
      const T z = b.gate.data()[i];
      const T sg = sigmoid(z);
      const T da = dact.data()[i];
      dgate.data()[i] = da * b.up.data()[i] * sg * (T(1) + z * (T(1) - sg));
      dup.data()[i] = da * z * sg;
    }
    if (train_trunk) {
      g.w_gate.noalias() += b.h2.transpose() * dgate;
      g.w_up.noalias() += b.h2.transpose() * dup;
    }
    Mat<T> dh2;
    dh2.noalias() = dgate * w.w_gate.transpose();
    dh2.noalias() += dup * w.w_up.transpose();
    rms_backward(b.x_mid, b.inv2, w.mlp_norm, dh2, tmp,
                 train_trunk ? &g.mlp_norm : nullptr);
    dx += tmp;  // dx is now d(x_mid)
    // Attention.
    if (train_trunk) g.wo.noalias() += b.attn.transpose() * dx;
    Mat<T> dattn;
    dattn.noalias() = dx * w.wo.transpose();
    Mat<T> dq = Mat<T>::Zero(total, d);
    Mat<T> dk = Mat<T>::Zero(total, d);
    Mat<T> dv = Mat<T>::Zero(total, d);
    size_t pi = 0;
    for (const auto& [start, len] : cache.segments) {
      for (int h = 0; h < heads; ++h, ++pi) {
        const Mat<T>& p = b.probs[pi];
        const auto d_o = dattn.block(start, h * hd, len, hd);
        dv.block(start, h * hd, len, hd).noalias() = p.transpose() * d_o;
        Mat<T> dp;
        dp.noalias() = d_o * b.v.block(start, h * hd, len, hd).transpose();
        for (Eigen::Index i = 0; i < len; ++i) {
          const T dot = dp.row(i).dot(p.row(i));
          dp.row(i) = (p.row(i).array() * (dp.row(i).array() - dot)).matrix();
        }
        dp *= attn_scale;
        dq.block(start, h * hd, len, hd).noalias() =
            dp * b.k.block(start, h * hd, len, hd);
        dk.block(start, h * hd, len, hd).noalias() =
            dp.transpose() * b.q.block(start, h * hd, len, hd);
      }
      rope_apply(dq, start, len, 0, heads, hd, rope_cos_, rope_sin_, true);
      rope_apply(dk, start, len, 0, heads, hd, rope_cos_, rope_sin_, true);
    }
    if (train_trunk) {
      g.wq.noalias() += b.h1.transpose() * dq;
      g.wk.noalias() += b.h1.transpose() * dk;
      g.wv.noalias() += b.h1.transpose() * dv;
    }
    Mat<T> dh1;
    dh1.noalias() = dq * w.wq.transpose();
    dh1.noalias() += dk * w.wk.transpose();
    dh1.noalias() += dv * w.wv.transpose();
    rms_backward(b.x_in, b.inv1, w.attn_norm, dh1, tmp,
                 train_trunk ? &g.attn_norm : nullptr);
    dx += tmp;
  }

  // Embedding and adapter backward.
  if (!train_embed && !train_adapt) return result;
  for (size_t e = 0; e < batch.size(); ++e) {
    const TrainingExample& ex = batch[e];
    const auto& ec = cache.examples[e];
    const Eigen::Index start = cache.segments[e].first;
    Mat<T> dvision, daudio;
    if (ec.has_vision) dvision = Mat<T>::Zero(ec.vision.out.rows(), d);
    if (ec.has_audio) daudio = Mat<T>::Zero(ec.audio.out.rows(), d);
    for (int t = 0; t < ex.plan.length(); ++t) {
      const InputStep& step = ex.plan.steps[t];
      const RowVec<T> gx = dx.row(start + t) * inv_rows;
      if (train_embed) {
        const Coord mark = locate(layout, step.column[0]);
        grads.embeddings[mark.layer].row(mark.local) += gx;
      }
      if (step.source == StepSource::kVisionFeature) {
        dvision.row(step.feature_row) += static_cast<T>(rows - 1) * gx;
      } else if (step.source == StepSource::kAudioFeature) {
        daudio.row(step.feature_row) += static_cast<T>(rows - 1) * gx;
      } else if (train_embed) {
        for (int r = 1; r < rows; ++r) {
          const Coord c = locate(layout, step.column[r]);
          grads.embeddings[c.layer].row(c.local) += gx;
        }
      }
    }
    if (train_adapt) {
      if (ec.has_vision) {
        adapter_backward(params_.vision_adapter, ec.vision, dvision, grads.vision_adapter);
      }
      if (ec.has_audio) {
        adapter_backward(params_.audio_adapter, ec.audio, daudio, grads.audio_adapter);
      }
    }
  }
  return result;
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template class OmniModel<float>;
template class OmniModel<double>;

}  // namespace omni
