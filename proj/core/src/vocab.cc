// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/vocab.h"

#include <string>

#include "json_io.h"
#include "omni/error.h"

namespace omni {
namespace {

// Offsets below the top of the text region.
constexpr int32_t kTextPadSlot = 1;
constexpr int32_t kTextBosSlot = 2;
constexpr int32_t kTextEosSlot = 3;
constexpr int32_t kIrqSlot = 4;
constexpr int32_t kNirqSlot = 5;
constexpr int32_t kModalitySlot = 6;  // + modality, 3 slots
constexpr int32_t kResponseSlot = 9;  // + task, kTaskKindCount slots

static_assert(kResponseSlot + kTaskKindCount - 1 == kReservedTextIds);

void require_controls(const VocabLayout& layout) {
  if (!supports_controls(layout)) {
    throw InvalidArgument("layout has no room for control tokens");
  }
}

}  // namespace

VocabLayout make_layout(int32_t text_region_size, int32_t audio_layer_count,
                        int32_t audio_layer_size, int32_t audio_code_count) {
  if (text_region_size <= 0 || audio_layer_count <= 0 ||
      audio_layer_size <= 0 || audio_code_count <= 0) {
    throw InvalidArgument("layout sizes must be positive");
  }
  if (audio_code_count > audio_layer_size) {
    throw InvalidArgument("audio_code_count " +
                          std::to_string(audio_code_count) +
                          " exceeds audio_layer_size " +
                          std::to_string(audio_layer_size));
  }
  const int64_t total = static_cast<int64_t>(text_region_size) +
                        static_cast<int64_t>(audio_layer_count) * audio_layer_size;
  if (total > INT32_MAX) throw InvalidArgument("layout exceeds 32-bit id space");
  return VocabLayout{text_region_size, audio_layer_count, audio_layer_size,
                     audio_code_count};
}

VocabLayout default_layout() { return make_layout(152000, 7, 4160, 4096); }

VocabLayout desk_layout() { return make_layout(256, 7, 128, 64); }

TokenId global_id(const VocabLayout& layout, int layer, int32_t local) {
  if (layer < 0 || layer > layout.audio_layer_count) {
    throw InvalidArgument("layer " + std::to_string(layer) + " out of range");
  }
  if (local < 0 || local >= layout.region_width(layer)) {
    throw InvalidArgument("local index " + std::to_string(local) +
                          " out of range for layer " + std::to_string(layer));
  }
  return layout.region_offset(layer) + local;
}

Coord locate(const VocabLayout& layout, TokenId id) {
  if (id < 0 || id >= layout.total_size()) {
    throw InvalidArgument("token id " + std::to_string(id) + " out of range");
  }
  if (id < layout.text_region_size) return {0, id};
  const int32_t audio = id - layout.text_region_size;
  return {1 + audio / layout.audio_layer_size, audio % layout.audio_layer_size};
}

bool supports_controls(const VocabLayout& layout) {
  return layout.text_region_size > kReservedTextIds &&
         layout.control_slot_count() >= kAudioControlIds;
}

TokenId control_id(const VocabLayout& layout, ControlToken token) {
  require_controls(layout);
  const int32_t top = layout.text_region_size;
  switch (token.kind) {
    case ControlKind::kTextPad: return top - kTextPadSlot;
    case ControlKind::kTextBos: return top - kTextBosSlot;
    case ControlKind::kTextEos: return top - kTextEosSlot;
    case ControlKind::kIrq: return top - kIrqSlot;
    case ControlKind::kNirq: return top - kNirqSlot;
    case ControlKind::kModalityMark:
      if (token.arg < 0 || token.arg >= kModalityCount) break;
      return top - kModalitySlot - token.arg;
    case ControlKind::kResponseMark:
      if (token.arg < 0 || token.arg >= kTaskKindCount) break;
      return top - kResponseSlot - token.arg;
    case ControlKind::kAudioPad:
    case ControlKind::kAudioBoa:
    case ControlKind::kAudioEoa: {
      if (token.arg < 1 || token.arg > layout.audio_layer_count) break;
      const int32_t slot = token.kind == ControlKind::kAudioPad   ? 0
                           : token.kind == ControlKind::kAudioBoa ? 1
                                                                  : 2;
      return global_id(layout, token.arg, layout.audio_code_count + slot);
    }
    case ControlKind::kUnassigned:
      break;
  }
  throw InvalidArgument("control token has no id in this layout");
}

TokenClass classify(const VocabLayout& layout, TokenId id) {
  const Coord c = locate(layout, id);
  const bool controls = supports_controls(layout);
  if (c.layer == 0) {
    const int32_t slot = layout.text_region_size - c.local;
    if (!controls || slot > kReservedTextIds) return {TokenCategory::kText, 0, {}};
    ControlToken tok;
    if (slot == kTextPadSlot) tok = {ControlKind::kTextPad, 0};
    else if (slot == kTextBosSlot) tok = {ControlKind::kTextBos, 0};
    else if (slot == kTextEosSlot) tok = {ControlKind::kTextEos, 0};
    else if (slot == kIrqSlot) tok = {ControlKind::kIrq, 0};
    else if (slot == kNirqSlot) tok = {ControlKind::kNirq, 0};
    else if (slot < kResponseSlot) tok = {ControlKind::kModalityMark, slot - kModalitySlot};
    else tok = {ControlKind::kResponseMark, slot - kResponseSlot};
    return {TokenCategory::kControl, 0, tok};
  }
  if (c.local < layout.audio_code_count) {
    return {TokenCategory::kAudioCode, c.layer, {}};
  }
  ControlToken tok{ControlKind::kUnassigned, c.layer};
  if (controls) {
    switch (c.local - layout.audio_code_count) {
      case 0: tok.kind = ControlKind::kAudioPad; break;
      case 1: tok.kind = ControlKind::kAudioBoa; break;
      case 2: tok.kind = ControlKind::kAudioEoa; break;
      default: break;
    }
  }
  return {TokenCategory::kControl, c.layer, tok};
}

TokenId pad_id(const VocabLayout& layout, int row) {
  return row == 0 ? control_id(layout, {ControlKind::kTextPad, 0})
                  : control_id(layout, {ControlKind::kAudioPad, row});
}

TokenId end_id(const VocabLayout& layout, int row) {
  return row == 0 ? control_id(layout, {ControlKind::kTextEos, 0})
                  : control_id(layout, {ControlKind::kAudioEoa, row});
}

TokenId response_mark(const VocabLayout& layout, TaskKind task) {
  return control_id(layout, {ControlKind::kResponseMark, static_cast<int>(task)});
}

TokenId modality_mark(const VocabLayout& layout, Modality modality) {
  return control_id(layout, {ControlKind::kModalityMark, static_cast<int>(modality)});
}

Json layout_json(const VocabLayout& layout) {
  return Json{{"text_region_size", layout.text_region_size},
              {"audio_layer_count", layout.audio_layer_count},
              {"audio_layer_size", layout.audio_layer_size},
              {"audio_code_count", layout.audio_code_count},
              {"control_slot_count", layout.control_slot_count()},
              {"total_size", layout.total_size()}};
}

VocabLayout layout_from(const Json& j) {
  try {
    VocabLayout layout = make_layout(j.at("text_region_size").get<int32_t>(),
                                     j.at("audio_layer_count").get<int32_t>(),
                                     j.at("audio_layer_size").get<int32_t>(),
                                     j.at("audio_code_count").get<int32_t>());
    if (j.contains("control_slot_count") &&
        j["control_slot_count"].get<int32_t>() != layout.control_slot_count()) {
      throw FormatError("layout control_slot_count inconsistent");
    }
    if (j.contains("total_size") &&
        j["total_size"].get<int32_t>() != layout.total_size()) {
      throw FormatError("layout total_size inconsistent");
    }
    return layout;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad layout json: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad layout json: ") + e.what());
  }
}

std::string layout_to_json(const VocabLayout& layout) {
  return layout_json(layout).dump();
}

VocabLayout layout_from_json(const std::string& text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad layout json: ") + e.what());
  }
  return layout_from(j);
}

uint64_t layout_hash(const VocabLayout& layout) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (int32_t field : {layout.text_region_size, layout.audio_layer_count,
                        layout.audio_layer_size, layout.audio_code_count}) {
    const auto u = static_cast<uint32_t>(field);
    for (int b = 0; b < 4; ++b) {
      h ^= (u >> (8 * b)) & 0xffu;
      h *= 0x100000001b3ULL;
    }
  }
  return h;
}

}  // namespace omni
