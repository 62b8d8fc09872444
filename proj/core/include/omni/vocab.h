// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_VOCAB_H_
#define OMNI_VOCAB_H_

#include <cstdint>
#include <string>

#include "omni/task_kind.h"

namespace omni {

using TokenId = int32_t;

// Partition of the global id space: the text region (layer 0) followed by
// audio_layer_count equally sized audio regions (layers 1..N), layer-major.
// Each audio region holds audio_code_count acoustic codes followed by
// control slots. Immutable once built by make_layout().
struct VocabLayout {
  int32_t text_region_size = 152000;
  int32_t audio_layer_count = 7;
  int32_t audio_layer_size = 4160;
  int32_t audio_code_count = 4096;

  int32_t control_slot_count() const {
    return audio_layer_size - audio_code_count;
  }
  int32_t total_size() const {
    return text_region_size + audio_layer_count * audio_layer_size;
  }
  // Rows in a token grid: one text row plus one per audio layer.
  int row_count() const { return 1 + audio_layer_count; }
  int32_t region_offset(int layer) const {
    return layer == 0 ? 0 : text_region_size + (layer - 1) * audio_layer_size;
  }
  int32_t region_width(int layer) const {
    return layer == 0 ? text_region_size : audio_layer_size;
  }

  friend bool operator==(const VocabLayout&, const VocabLayout&) = default;
};

// Throws InvalidArgument on non-positive sizes or code count > layer size.
VocabLayout make_layout(int32_t text_region_size, int32_t audio_layer_count,
                        int32_t audio_layer_size, int32_t audio_code_count);

// 152,000 text ids + 7 x 4,160 audio ids = 181,120.
VocabLayout default_layout();

// Reduced layout used by the desk-scale pipeline (CPU trainable in minutes).
VocabLayout desk_layout();

struct Coord {
  int layer = 0;
  int32_t local = 0;
  friend bool operator==(const Coord&, const Coord&) = default;
};

TokenId global_id(const VocabLayout& layout, int layer, int32_t local);
Coord locate(const VocabLayout& layout, TokenId id);

enum class ControlKind : unsigned char {
  kTextPad,
  kTextBos,
  kTextEos,
  kIrq,
  kNirq,
  kModalityMark,  // arg = Modality
  kResponseMark,  // arg = TaskKind
  kAudioPad,      // arg = audio layer (1-based)
  kAudioBoa,
  kAudioEoa,
  kUnassigned,    // spare control slot in an audio region
};

struct ControlToken {
  ControlKind kind = ControlKind::kUnassigned;
  int arg = 0;
  friend bool operator==(const ControlToken&, const ControlToken&) = default;
};

// Ids reserved at the top of the text region.
inline constexpr int32_t kReservedTextIds = 8 + kTaskKindCount;
// Ids used at the start of each audio control sub-region (PAD, BOA, EOA).
inline constexpr int32_t kAudioControlIds = 3;

// True if the layout has room for the full control allocation.
bool supports_controls(const VocabLayout& layout);

// Throws InvalidArgument if the layout cannot hold the token.
TokenId control_id(const VocabLayout& layout, ControlToken token);

enum class TokenCategory : unsigned char { kText, kAudioCode, kControl };

struct TokenClass {
  TokenCategory category = TokenCategory::kText;
  int layer = 0;
  ControlToken control;  // meaningful for kControl only
  friend bool operator==(const TokenClass&, const TokenClass&) = default;
};

TokenClass classify(const VocabLayout& layout, TokenId id);

// Per-row helpers. Row 0 is the text row, row k the k-th audio layer.
TokenId pad_id(const VocabLayout& layout, int row);
TokenId end_id(const VocabLayout& layout, int row);  // TEXT_EOS / AUDIO_EOA(k)
TokenId response_mark(const VocabLayout& layout, TaskKind task);
TokenId modality_mark(const VocabLayout& layout, Modality modality);

std::string layout_to_json(const VocabLayout& layout);
VocabLayout layout_from_json(const std::string& text);
// FNV-1a over the four defining fields, little-endian.
uint64_t layout_hash(const VocabLayout& layout);

}  // namespace omni

#endif  // OMNI_VOCAB_H_
