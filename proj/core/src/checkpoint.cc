// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/checkpoint.h"

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "binary_io.h"
#include "json_io.h"
#include "omni/error.h"

namespace omni {
namespace {

constexpr uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr uint64_t kFnvPrime = 0x100000001b3ULL;

uint64_t fnv_bytes(uint64_t h, const unsigned char* p, size_t n) {
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
  return h;
}

std::string hex64(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Allocates a parameter set with the shapes a config implies.
ModelParams<float> shaped_params(const ModelConfig& config) {
  ModelParams<float> p;
  const int d = config.d_model;
  const int ffn = config.resolved_ffn_hidden();
  const int ad = config.resolved_adapter_hidden();
  auto adapter = [&](AdapterWeights<float>& a, int in) {
    a.w_gate.resize(in, ad);
    a.w_up.resize(in, ad);
    a.w_down.resize(ad, d);
  };
  adapter(p.vision_adapter, config.vision_feature_width);
  adapter(p.audio_adapter, config.audio_feature_width);
  p.blocks.resize(config.n_trunk_layers);
  for (auto& b : p.blocks) {
    b.attn_norm.resize(1, d);
    b.wq.resize(d, d);
    b.wk.resize(d, d);
    b.wv.resize(d, d);
    b.wo.resize(d, d);
    b.mlp_norm.resize(1, d);
    b.w_gate.resize(d, ffn);
    b.w_up.resize(d, ffn);
    b.w_down.resize(ffn, d);
  }
  p.final_norm.resize(1, d);
  const int rows = config.vocab.row_count();
  p.embeddings.resize(rows);
  p.heads.resize(rows);
  for (int r = 0; r < rows; ++r) {
    p.embeddings[r].resize(config.vocab.region_width(r), d);
    p.heads[r].resize(d, config.vocab.region_width(r));
  }
  return p;
}

}  // namespace

Json model_config_json(const ModelConfig& c) {
  return Json{{"d_model", c.d_model},
              {"n_trunk_layers", c.n_trunk_layers},
              {"n_attn_heads", c.n_attn_heads},
              {"context_length", c.context_length},
              {"ffn_hidden", c.resolved_ffn_hidden()},
              {"adapter_hidden", c.resolved_adapter_hidden()},
              {"vision_feature_width", c.vision_feature_width},
              {"audio_feature_width", c.audio_feature_width},
              {"rope_base", c.rope_base},
              {"norm_eps", c.norm_eps},
              {"vocab", layout_json(c.vocab)},
              {"sampling",
               {{"greedy", c.sampling.greedy},
                {"temperature", c.sampling.temperature},
                {"top_k", c.sampling.top_k}}}};
}

ModelConfig model_config_from(const Json& j) {
  try {
    ModelConfig c;
    c.d_model = j.at("d_model").get<int>();
    c.n_trunk_layers = j.at("n_trunk_layers").get<int>();
    c.n_attn_heads = j.at("n_attn_heads").get<int>();
    c.context_length = j.at("context_length").get<int>();
    c.ffn_hidden = j.at("ffn_hidden").get<int>();
    c.adapter_hidden = j.at("adapter_hidden").get<int>();
    c.vision_feature_width = j.at("vision_feature_width").get<int>();
    c.audio_feature_width = j.at("audio_feature_width").get<int>();
    c.rope_base = j.at("rope_base").get<float>();
    c.norm_eps = j.at("norm_eps").get<float>();
    c.vocab = layout_from(j.at("vocab"));
    const Json& s = j.at("sampling");
    c.sampling.greedy = s.at("greedy").get<bool>();
    c.sampling.temperature = s.at("temperature").get<float>();
    c.sampling.top_k = s.at("top_k").get<int>();
    c.validate();
    return c;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
}

std::string model_config_to_json(const ModelConfig& config) {
  return model_config_json(config).dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  try {
    return model_config_from(Json::parse(text));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad model config: ") + e.what());
  }
}

uint64_t tensor_hash(const MatF& tensor) {
  uint64_t h = kFnvOffset;
  const auto rows = static_cast<uint32_t>(tensor.rows());
  const auto cols = static_cast<uint32_t>(tensor.cols());
  h = fnv_bytes(h, reinterpret_cast<const unsigned char*>(&rows), 4);
  h = fnv_bytes(h, reinterpret_cast<const unsigned char*>(&cols), 4);
  return fnv_bytes(h, reinterpret_cast<const unsigned char*>(tensor.data()),
                   sizeof(float) * static_cast<size_t>(tensor.size()));
}

std::string params_hash(const ModelParams<float>& params) {
  uint64_t h = kFnvOffset;
  for (const auto& t : params.tensors()) {
    const uint64_t th = tensor_hash(*t.value);
    h = fnv_bytes(h, reinterpret_cast<const unsigned char*>(&th), sizeof(th));
  }
  return hex64(h);
}

void write_checkpoint(std::ostream& out, const Model& model, const CheckpointMeta& meta) {
  const auto tensors = model.params().tensors();
  Json manifest = Json::array();
  std::map<std::string, std::vector<std::string>> groups;
  for (const auto& t : tensors) {
    manifest.push_back({{"name", t.name},
                        {"group", std::string(group_name(t.group))},
                        {"rows", t.value->rows()},
                        {"cols", t.value->cols()}});
    groups[std::string(group_name(t.group))].push_back(t.name);
  }
  Json lineage = Json::array();
  for (const auto& l : meta.lineage) {
    lineage.push_back({{"stage", l.stage}, {"params_hash", l.params_hash}});
  }
  const Json header{{"format", "omnistream-checkpoint"},
                    {"version", kCheckpointVersion},
                    {"config", model_config_json(model.config())},
                    {"layout", layout_json(model.layout())},
                    {"stage", meta.stage},
                    {"lineage", lineage},
                    {"parameter_groups", groups},
                    {"tensors", manifest}};
  const std::string text = header.dump();
  io::put_magic(out, "OMCK");
  io::put_le<uint32_t>(out, kCheckpointVersion);
  io::put_le<uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : tensors) {
    io::put_le<uint32_t>(out, static_cast<uint32_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    io::put_le<uint32_t>(out, static_cast<uint32_t>(t.value->rows()));
    io::put_le<uint32_t>(out, static_cast<uint32_t>(t.value->cols()));
    const float* p = t.value->data();
    for (Eigen::Index i = 0; i < t.value->size(); ++i) io::put_f32(out, p[i]);
  }
  if (!out) throw RuntimeFailure("failed writing checkpoint");
}

namespace {

Json read_header(std::istream& in) {
  io::expect_magic(in, "OMCK", "checkpoint");
  const auto version = io::get_le<uint32_t>(in, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto size = io::get_le<uint64_t>(in, "checkpoint header size");
  if (size > (64u << 20)) throw FormatError("checkpoint header implausibly large");
  std::string text(size, '\0');
  if (!in.read(text.data(), static_cast<std::streamsize>(size))) {
    throw FormatError("truncated checkpoint header");
  }
  try {
    return Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad checkpoint header: ") + e.what());
  }
}

}  // namespace

LoadedCheckpoint read_checkpoint(std::istream& in) {
  const Json header = read_header(in);
  const ModelConfig config = model_config_from(header.at("config"));
  if (!(layout_from(header.at("layout")) == config.vocab)) {
    throw FormatError("checkpoint layout disagrees with its config");
  }
  ModelParams<float> params = shaped_params(config);
  auto tensors = params.tensors();
  const Json& manifest = header.at("tensors");
  if (manifest.size() != tensors.size()) {
    throw FormatError("checkpoint tensor manifest does not match config");
  }
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto name_len = io::get_le<uint32_t>(in, "tensor name length");
    if (name_len > 4096) throw FormatError("tensor name implausibly long");
    std::string name(name_len, '\0');
    if (!in.read(name.data(), name_len)) throw FormatError("truncated tensor name");
    if (name != tensors[i].name || manifest[i].at("name").get<std::string>() != name) {
      throw FormatError("unexpected tensor '" + name + "', wanted '" +
                        tensors[i].name + "'");
    }
    const auto rows = io::get_le<uint32_t>(in, "tensor rows");
    const auto cols = io::get_le<uint32_t>(in, "tensor cols");
    MatF& m = *tensors[i].value;
    if (rows != m.rows() || cols != m.cols()) {
      throw FormatError("tensor '" + name + "' has the wrong shape");
    }
    float* p = m.data();
    for (Eigen::Index k = 0; k < m.size(); ++k) p[k] = io::get_f32(in, "tensor payload");
  }
  CheckpointMeta meta;
  meta.stage = header.value("stage", 0);
  for (const Json& l : header.at("lineage")) {
    meta.lineage.push_back({l.at("stage").get<int>(), l.at("params_hash").get<std::string>()});
  }
  return LoadedCheckpoint{Model(config, std::move(params)), std::move(meta)};
}

void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointMeta& meta) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write checkpoint " + path);
  write_checkpoint(out, model, meta);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return read_checkpoint(in);
}

std::string checkpoint_header(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path);
  return read_header(in).dump(2);
}

}  // namespace omni
