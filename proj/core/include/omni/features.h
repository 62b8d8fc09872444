// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_FEATURES_H_
#define OMNI_FEATURES_H_

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "omni/task_kind.h"
#include "omni/tensor.h"

namespace omni {

// One audio frame: a local code per audio layer.
using AudioFrame = std::vector<int32_t>;

inline constexpr int kVisionPatchCount = 49;
inline constexpr int kVisionSequenceLength = kVisionPatchCount + 1;
// The stub image is a scene of this many objects, drawn from kSceneVocab ids.
inline constexpr int kSceneObjects = 4;
inline constexpr int kSceneVocab = 32;

// Continuous encoder output, one row per step.
struct FeatureSequence {
  Modality modality = Modality::kVision;
  MatF vectors;

  int length() const { return static_cast<int>(vectors.rows()); }
  int width() const { return static_cast<int>(vectors.cols()); }
};

// Throws InvalidArgument if a vision sequence is not 50 long or the modality
// is text.
void validate_features(const FeatureSequence& features);

// Object ids of the pseudo-image behind a seed.
std::array<int, kSceneObjects> vision_scene(uint64_t image_seed);

// Deterministic pseudo-CLIP output: 49 patch rows, then a global row equal to
// the mean of the patches. Patch p shows object p % kSceneObjects.
FeatureSequence stub_vision_encode(uint64_t image_seed, int width);

// Deterministic pseudo-Whisper output: one row per frame, each row a pure
// function of that frame's codes. Throws InvalidArgument on empty input.
FeatureSequence stub_audio_encode(const std::vector<AudioFrame>& frames,
                                  int width);

// Feature file: "OMF1", u8 modality, u32 L, u32 D, L x D little-endian f32.
void write_features(std::ostream& out, const FeatureSequence& features);
FeatureSequence read_features(std::istream& in);
FeatureSequence load_features(const std::string& path);
void save_features(const std::string& path, const FeatureSequence& features);

}  // namespace omni

#endif  // OMNI_FEATURES_H_
