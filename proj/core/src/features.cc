// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/features.h"

#include <cmath>
#include <fstream>
#include <string>

#include "binary_io.h"
#include "omni/error.h"
#include "omni/rng.h"

namespace omni {
namespace {

constexpr uint64_t kSceneTag = 0x5343454e45ULL;
constexpr uint64_t kObjectTag = 0x4f424a454354ULL;
constexpr uint64_t kSlotTag = 0x534c4f54ULL;
constexpr uint64_t kPatchNoiseTag = 0x4e4f495345ULL;
constexpr uint64_t kAudioTag = 0x415544494fULL;

float pattern(uint64_t tag, uint64_t a, uint64_t b, int d) {
  return static_cast<float>(
      hash_to_signed_unit(mix64(mix64(tag, a), b, static_cast<uint64_t>(d))));
}

}  // namespace

void validate_features(const FeatureSequence& features) {
  if (features.modality == Modality::kText) {
    throw InvalidArgument("feature sequences are vision or audio only");
  }
  if (features.modality == Modality::kVision &&
      features.length() != kVisionSequenceLength) {
    throw InvalidArgument("vision features need exactly 50 vectors, got " +
                          std::to_string(features.length()));
  }
  if (features.modality == Modality::kAudio && features.length() == 0) {
    throw InvalidArgument("audio features are empty");
  }
  if (features.width() <= 0) throw InvalidArgument("feature width is zero");
}

std::array<int, kSceneObjects> vision_scene(uint64_t image_seed) {
  std::array<int, kSceneObjects> scene{};
  for (int j = 0; j < kSceneObjects; ++j) {
    scene[j] = static_cast<int>(mix64(kSceneTag, image_seed, j) % kSceneVocab);
  }
  return scene;
}

FeatureSequence stub_vision_encode(uint64_t image_seed, int width) {
  if (width <= 0) throw InvalidArgument("feature width must be positive");
  const auto scene = vision_scene(image_seed);
  FeatureSequence out{Modality::kVision, MatF::Zero(kVisionSequenceLength, width)};
  for (int p = 0; p < kVisionPatchCount; ++p) {
    const int slot = p % kSceneObjects;
    for (int d = 0; d < width; ++d) {
      out.vectors(p, d) =
          pattern(kObjectTag, scene[slot], 0, d) +
          0.5f * pattern(kSlotTag, slot, 0, d) +
          0.1f * pattern(kPatchNoiseTag, image_seed, p, d);
    }
  }
  out.vectors.row(kVisionPatchCount) =
      out.vectors.topRows(kVisionPatchCount).colwise().mean();
  return out;
}

FeatureSequence stub_audio_encode(const std::vector<AudioFrame>& frames,
                                  int width) {
  if (frames.empty()) throw InvalidArgument("audio input has no frames");
  if (width <= 0) throw InvalidArgument("feature width must be positive");
  FeatureSequence out{Modality::kAudio,
                      MatF::Zero(static_cast<int>(frames.size()), width)};
  for (size_t i = 0; i < frames.size(); ++i) {
    const AudioFrame& frame = frames[i];
    if (frame.empty()) throw InvalidArgument("audio frame has no codes");
    const float scale = 1.0f / std::sqrt(static_cast<float>(frame.size()));
    for (int d = 0; d < width; ++d) {
      float acc = 0.0f;
      for (size_t k = 0; k < frame.size(); ++k) {
        acc += pattern(kAudioTag, k, static_cast<uint64_t>(frame[k]), d);
      }
      out.vectors(static_cast<int>(i), d) = acc * scale;
    }
  }
  return out;
}

void write_features(std::ostream& out, const FeatureSequence& features) {
  validate_features(features);
  io::put_magic(out, "OMF1");
  out.put(static_cast<char>(features.modality));
  io::put_le<uint32_t>(out, static_cast<uint32_t>(features.length()));
  io::put_le<uint32_t>(out, static_cast<uint32_t>(features.width()));
  for (int r = 0; r < features.length(); ++r) {
    for (int c = 0; c < features.width(); ++c) io::put_f32(out, features.vectors(r, c));
  }
  if (!out) throw RuntimeFailure("failed writing features");
}

FeatureSequence read_features(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw FormatError("truncated feature header");
  if (std::string(magic, 3) != "OMF") throw FormatError("bad magic in feature file");
  if (magic[3] != '1') {
    throw FormatError(std::string("unsupported feature file version '") +
                      magic[3] + "'");
  }
  const int modality = in.get();
  if (modality == std::char_traits<char>::eof()) {
    throw FormatError("truncated feature header");
  }
  if (modality != static_cast<int>(Modality::kVision) &&
      modality != static_cast<int>(Modality::kAudio)) {
    throw FormatError("unknown feature modality " + std::to_string(modality));
  }
  const auto length = io::get_le<uint32_t>(in, "feature length");
  const auto width = io::get_le<uint32_t>(in, "feature width");
  if (length > (1u << 20) || width > (1u << 16)) {
    throw FormatError("feature shape implausibly large");
  }
  FeatureSequence out{static_cast<Modality>(modality),
                      MatF(static_cast<int>(length), static_cast<int>(width))};
  for (uint32_t r = 0; r < length; ++r) {
    for (uint32_t c = 0; c < width; ++c) {
      out.vectors(r, c) = io::get_f32(in, "feature payload");
    }
  }
  try {
    validate_features(out);
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("feature shape error: ") + e.what());
  }
  return out;
}

FeatureSequence load_features(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open feature file " + path);
  return read_features(in);
}

void save_features(const std::string& path, const FeatureSequence& features) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write feature file " + path);
  write_features(out, features);
}

}  // namespace omni
