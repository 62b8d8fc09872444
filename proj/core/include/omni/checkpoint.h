// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_CHECKPOINT_H_
#define OMNI_CHECKPOINT_H_

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "omni/model.h"

namespace omni {

// One link of a checkpoint's ancestry.
struct LineageEntry {
  int stage = 0;
  std::string params_hash;  // hex digest of the parameters after the stage
  friend bool operator==(const LineageEntry&, const LineageEntry&) = default;
};

struct CheckpointMeta {
  int stage = 0;  // 0 = freshly initialized
  std::vector<LineageEntry> lineage;
};

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
};

// File layout: "OMCK", u32 version, u64 header byte count, JSON header
// (config, layout, tensor manifest grouped by parameter group, lineage), then
// per manifest entry: u32 name length, name, u32 rows, u32 cols, rows x cols
// little-endian f32.
inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(std::ostream& out, const Model& model, const CheckpointMeta& meta);
LoadedCheckpoint read_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Model& model,
                     const CheckpointMeta& meta);
LoadedCheckpoint load_checkpoint(const std::string& path);

// The JSON header of a checkpoint file, pretty-printed.
std::string checkpoint_header(const std::string& path);

std::string model_config_to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const std::string& text);

// FNV-1a digests over the raw float bytes.
uint64_t tensor_hash(const MatF& tensor);
std::string params_hash(const ModelParams<float>& params);

}  // namespace omni

#endif  // OMNI_CHECKPOINT_H_
