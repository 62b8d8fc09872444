// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#ifndef OMNI_DUPLEX_H_
#define OMNI_DUPLEX_H_

#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "omni/features.h"
#include "omni/generate.h"
#include "omni/model.h"
#include "omni/rng.h"

namespace omni {

struct StreamFrame {
  AudioFrame codes;  // one local code per audio layer
  int64_t timestamp = 0;
};

enum class Status : unsigned char { kNirq = 0, kIrq = 1 };

enum class DuplexMode : unsigned char { kSpeaking, kListening };

// Half-open frame range.
struct Span {
  int begin = 0;
  int end = 0;
  int size() const { return end - begin; }
  friend bool operator==(const Span&, const Span&) = default;
};

// A labeled stream: noise, then a stop phrase (marker_span), then a tail of
// further audio (tail_span). Tail frames are IRQ, everything else NIRQ.
struct InterruptSample {
  std::vector<StreamFrame> frames;
  std::vector<Status> labels;
  Span marker_span;
  Span tail_span;
};

using PhraseGenerator = std::function<std::vector<AudioFrame>(Rng&)>;
using NoiseGenerator = std::function<std::vector<AudioFrame>(Rng&, int frames)>;

// The canonical stop phrase: frames x audio layers of fixed codes.
std::vector<AudioFrame> stop_motif(const VocabLayout& layout, int frames = 4);

// Speaker variation: up to max_fraction of the motif codes are replaced by
// other codes. max_fraction 0 yields the exact motif.
PhraseGenerator stop_phrase_generator(const VocabLayout& layout, double max_fraction = 0.3,
                                      int frames = 4);

// Mixture of white noise, a periodic music-like pattern and distractor speech
// (frames that never complete the motif).
NoiseGenerator background_noise_generator(const VocabLayout& layout);

struct InterruptDatasetOptions {
  int noise_min_frames = 4;
  int noise_max_frames = 24;
  double tail_max_seconds = 10.0;
};

// Tail length is uniform over [0, round(tail_max_seconds * frame_rate)] frames.
std::vector<InterruptSample> build_interrupt_dataset(
    uint64_t seed, int count, double frame_rate, const PhraseGenerator& phrase,
    const NoiseGenerator& noise, const InterruptDatasetOptions& options = {});

// Streams that contain no stop phrase at all.
std::vector<std::vector<StreamFrame>> build_noise_streams(uint64_t seed, int count,
                                                          int frames,
                                                          const NoiseGenerator& noise,
                                                          double frame_rate = 2.0);

// {"frames":[[c1..cN]...],"labels":[0|1...],"marker_span":[s,e],"tail_span":[s,e]}
std::string interrupt_sample_to_json_line(const InterruptSample& sample);
InterruptSample interrupt_sample_from_json_line(const std::string& line,
                                                const VocabLayout& layout);

// Input column for a listening frame: TEXT_PAD then the frame's codes.
std::vector<TokenId> frame_column(const VocabLayout& layout, const AudioFrame& codes);

// Emits one status per ingested frame.
class StatusDetector {
 public:
  virtual ~StatusDetector() = default;
  virtual void reset() = 0;
  virtual Status ingest(const StreamFrame& frame) = 0;
};

// Exact-match stub. Latches once the most recent frames equal the motif; the
// frame after the motif and every later frame are IRQ.
class MotifDetector : public StatusDetector {
 public:
  explicit MotifDetector(std::vector<AudioFrame> motif);
  void reset() override;
  Status ingest(const StreamFrame& frame) override;

 private:
  std::vector<AudioFrame> motif_;
  std::deque<AudioFrame> window_;
  bool latched_ = false;
};

class ConstantDetector : public StatusDetector {
 public:
  explicit ConstantDetector(Status status) : status_(status) {}
  void reset() override {}
  Status ingest(const StreamFrame&) override { return status_; }

 private:
  Status status_;
};

// The model in a listening session: primed with the interrupt marker, fed one
// frame column per step; the status is the larger of the IRQ and NIRQ text
// logits. The session restarts when the context fills up.
class ModelDetector : public StatusDetector {
 public:
  explicit ModelDetector(const Model& model);
  void reset() override;
  Status ingest(const StreamFrame& frame) override;

 private:
  const Model& model_;
  Model::DecodeState state_;
  MatF marker_;
};

class DuplexEngine {
 public:
  explicit DuplexEngine(std::unique_ptr<StatusDetector> detector);

  DuplexMode mode() const { return mode_; }
  const std::vector<Status>& status_log() const { return status_log_; }
  // True while a response is still being produced.
  bool producing() const { return session_ && !session_->finished(); }

  // Starts answering a complete query; the engine enters Speaking.
  void submit_query(std::unique_ptr<GenerationSession> session);

  // Classifies one frame. An IRQ while Speaking halts the response and
  // switches to Listening. Throws RuntimeFailure without a detector.
  Status ingest_frame(const StreamFrame& frame);

  // Next output column, or nullopt once halted or finished.
  std::optional<std::vector<TokenId>> next_column();

  const GenerationSession* session() const { return session_.get(); }

 private:
  std::unique_ptr<StatusDetector> detector_;
  std::unique_ptr<GenerationSession> session_;
  DuplexMode mode_ = DuplexMode::kListening;
  bool halted_ = false;
  std::vector<Status> status_log_;
};

// Pull-based input stream; nullopt marks the end.
using FrameSource = std::function<std::optional<StreamFrame>()>;

FrameSource frames_source(std::vector<StreamFrame> frames);

// Ordered, bounded hand-off between a capture thread and the engine. push
// blocks while full; pop blocks while empty and returns nullopt after close.
class FrameQueue {
 public:
  explicit FrameQueue(size_t capacity);
  void push(StreamFrame frame);
  void close();
  std::optional<StreamFrame> pop();
  FrameSource source();

 private:
  size_t capacity_;
  std::deque<StreamFrame> items_;
  bool closed_ = false;
  std::mutex mutex_;
  std::condition_variable not_full_;
  std::condition_variable not_empty_;
};

struct DuplexTranscript {
  std::vector<std::vector<TokenId>> columns;
  std::vector<Status> status_log;
  std::optional<int> stop_step;  // step whose frame triggered the halt
  bool finished = false;         // response reached its natural end
};

// Interleaves listening and speaking: at step s one frame is ingested (when
// the stream still has one) and, unless that frame halted the response, one
// column is emitted. Ends on a halt or when the response is complete.
DuplexTranscript run_duplex_session(DuplexEngine& engine, const FrameSource& input,
                                    std::unique_ptr<GenerationSession> session);

struct DuplexMetrics {
  double frame_accuracy = 0.0;
  double false_trigger_rate = 0.0;  // IRQ per frame on noise-only streams
  double irq_recall = 0.0;          // tail frames labeled IRQ
  double mean_latency = 0.0;        // frames from marker end to first IRQ
  int early_triggers = 0;           // first IRQ before the marker ended
  int misses = 0;                   // no IRQ anywhere in a non-empty tail
  int64_t frames = 0;
};

// Scores per-frame statuses. Latency counts samples with a non-empty tail; a
// miss counts as the full tail length.
DuplexMetrics score_statuses(const std::vector<InterruptSample>& samples,
                             const std::vector<std::vector<Status>>& predicted,
                             const std::vector<std::vector<Status>>& noise_predicted);

// Runs the detector over every stream (reset before each) and scores it.
DuplexMetrics evaluate_duplex(StatusDetector& detector,
                              const std::vector<InterruptSample>& samples,
                              const std::vector<std::vector<StreamFrame>>& noise_streams);

std::string metrics_to_json(const DuplexMetrics& metrics);

}  // namespace omni

#endif  // OMNI_DUPLEX_H_
