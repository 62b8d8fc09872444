// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/duplex.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_io.h"
#include "omni/error.h"

namespace omni {
namespace {

constexpr uint64_t kMotifTag = 0x6d6f746966ULL;

AudioFrame random_frame(const VocabLayout& layout, Rng& rng) {
  AudioFrame f(static_cast<size_t>(layout.audio_layer_count));
  for (auto& c : f) c = static_cast<int32_t>(rng.below(layout.audio_code_count));
  return f;
}

void check_frame(const VocabLayout& layout, const AudioFrame& codes) {
  if (static_cast<int>(codes.size()) != layout.audio_layer_count) {
    throw InvalidArgument("frame has " + std::to_string(codes.size()) +
                          " codes, layout has " +
                          std::to_string(layout.audio_layer_count) + " audio layers");
  }
  for (int32_t c : codes) {
    if (c < 0 || c >= layout.audio_code_count) {
      throw InvalidArgument("frame code " + std::to_string(c) + " out of range");
    }
  }
}

}  // namespace

std::vector<AudioFrame> stop_motif(const VocabLayout& layout, int frames) {
  if (frames <= 0) throw InvalidArgument("motif needs at least one frame");
  std::vector<AudioFrame> motif(static_cast<size_t>(frames));
  for (int i = 0; i < frames; ++i) {
    motif[i].resize(static_cast<size_t>(layout.audio_layer_count));
    for (int k = 0; k < layout.audio_layer_count; ++k) {
      motif[i][k] = static_cast<int32_t>(mix64(kMotifTag, static_cast<uint64_t>(i),
                                               static_cast<uint64_t>(k)) %
                                         static_cast<uint64_t>(layout.audio_code_count));
    }
  }
  return motif;
}

PhraseGenerator stop_phrase_generator(const VocabLayout& layout, double max_fraction,
                                      int frames) {
  if (max_fraction < 0.0 || max_fraction > 1.0) {
    throw InvalidArgument("substitution fraction must be in [0, 1]");
  }
  return [motif = stop_motif(layout, frames), max_fraction,
          codes = layout.audio_code_count](Rng& rng) {
    std::vector<AudioFrame> phrase = motif;
    const int layers = static_cast<int>(phrase[0].size());
    const int total = static_cast<int>(phrase.size()) * layers;
    const int most = static_cast<int>(std::floor(max_fraction * total));
    const int count = most > 0 ? static_cast<int>(rng.range(0, most)) : 0;
    std::vector<int> cells(static_cast<size_t>(total));
    std::iota(cells.begin(), cells.end(), 0);
    for (int i = 0; i < count; ++i) {
      const int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(total - i)));
      std::swap(cells[i], cells[j]);
      int32_t& code = phrase[cells[i] / layers][cells[i] % layers];
      code = static_cast<int32_t>(
          (code + 1 + static_cast<int32_t>(rng.below(static_cast<uint64_t>(codes - 1)))) %
          codes);
    }
    return phrase;
  };
}

NoiseGenerator background_noise_generator(const VocabLayout& layout) {
  return [layout, motif = stop_motif(layout)](Rng& rng, int frames) {
    std::vector<AudioFrame> out;
    out.reserve(static_cast<size_t>(frames));
    while (static_cast<int>(out.size()) < frames) {
      const int left = frames - static_cast<int>(out.size());
      switch (rng.below(3)) {
        case 0: {  // white noise
          const int n = static_cast<int>(rng.range(1, left));
          for (int i = 0; i < n; ++i) out.push_back(random_frame(layout, rng));
          break;
        }
        case 1: {  // music: a short repeating pattern
          const int period = static_cast<int>(rng.range(2, 3));
          std::vector<AudioFrame> bar;
          for (int i = 0; i < period; ++i) bar.push_back(random_frame(layout, rng));
          const int n = static_cast<int>(rng.range(1, left));
          for (int i = 0; i < n; ++i) out.push_back(bar[i % period]);
          break;
        }
        default: {  // distractor speech: starts like the stop phrase, then diverges
          const int keep = static_cast<int>(
              rng.range(1, std::min<int64_t>(left, static_cast<int64_t>(motif.size()) - 1)));
          for (int i = 0; i < keep; ++i) out.push_back(motif[i]);
          if (static_cast<int>(out.size()) < frames) {
            AudioFrame f = random_frame(layout, rng);
            if (f == motif[keep]) f[0] = (f[0] + 1) % layout.audio_code_count;
            out.push_back(std::move(f));
          }
          break;
        }
      }
    }
    return out;
  };
}

std::vector<InterruptSample> build_interrupt_dataset(uint64_t seed, int count,
                                                     double frame_rate,
                                                     const PhraseGenerator& phrase,
                                                     const NoiseGenerator& noise,
                                                     const InterruptDatasetOptions& options) {
  if (count < 1) throw InvalidArgument("count must be at least 1");
  if (!(frame_rate > 0.0)) throw InvalidArgument("frame rate must be positive");
  if (options.noise_min_frames < 0 || options.noise_max_frames < options.noise_min_frames ||
      options.tail_max_seconds < 0.0) {
    throw InvalidArgument("bad interrupt dataset options");
  }
  if (!phrase || !noise) throw InvalidArgument("phrase and noise generators are required");
  const int max_tail = static_cast<int>(std::lround(options.tail_max_seconds * frame_rate));
  std::vector<InterruptSample> out;
  out.reserve(static_cast<size_t>(count));
  for (int n = 0; n < count; ++n) {
    Rng rng(mix64(seed, static_cast<uint64_t>(n)));
    const int lead = static_cast<int>(rng.range(options.noise_min_frames,
                                                options.noise_max_frames));
    std::vector<AudioFrame> frames = noise(rng, lead);
    frames.resize(static_cast<size_t>(lead));
    const std::vector<AudioFrame> stop = phrase(rng);
    if (stop.empty()) throw InvalidArgument("phrase generator produced an empty phrase");
    InterruptSample s;
    s.marker_span = {lead, lead + static_cast<int>(stop.size())};
    frames.insert(frames.end(), stop.begin(), stop.end());
    const int tail = static_cast<int>(rng.range(0, max_tail));
    std::vector<AudioFrame> after = noise(rng, tail);
    after.resize(static_cast<size_t>(tail));
    frames.insert(frames.end(), after.begin(), after.end());
    s.tail_span = {s.marker_span.end, s.marker_span.end + tail};
    for (size_t i = 0; i < frames.size(); ++i) {
      s.frames.push_back({std::move(frames[i]), static_cast<int64_t>(i)});
      const int idx = static_cast<int>(i);
      s.labels.push_back(idx >= s.tail_span.begin && idx < s.tail_span.end ? Status::kIrq
                                                                           : Status::kNirq);
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::vector<StreamFrame>> build_noise_streams(uint64_t seed, int count,
                                                          int frames,
                                                          const NoiseGenerator& noise,
                                                          double frame_rate) {
  if (count < 0 || frames < 0) throw InvalidArgument("count and frames must be non-negative");
  if (!(frame_rate > 0.0)) throw InvalidArgument("frame rate must be positive");
  std::vector<std::vector<StreamFrame>> out;
  for (int n = 0; n < count; ++n) {
    Rng rng(mix64(seed, 0x6e6f697365ULL, static_cast<uint64_t>(n)));
    std::vector<AudioFrame> codes = noise(rng, frames);
    codes.resize(static_cast<size_t>(frames));
    std::vector<StreamFrame> stream;
    for (int i = 0; i < frames; ++i) stream.push_back({std::move(codes[i]), i});
    out.push_back(std::move(stream));
  }
  return out;
}

std::string interrupt_sample_to_json_line(const InterruptSample& sample) {
  Json frames = Json::array();
  for (const auto& f : sample.frames) frames.push_back(f.codes);
  Json labels = Json::array();
  for (Status s : sample.labels) labels.push_back(static_cast<int>(s));
  return Json{{"frames", frames},
              {"labels", labels},
              {"marker_span", {sample.marker_span.begin, sample.marker_span.end}},
              {"tail_span", {sample.tail_span.begin, sample.tail_span.end}}}
      .dump();
}

InterruptSample interrupt_sample_from_json_line(const std::string& line,
                                                const VocabLayout& layout) {
  InterruptSample s;
  try {
    const Json j = Json::parse(line);
    int index = 0;
    for (const Json& f : j.at("frames")) {
      AudioFrame codes = f.get<AudioFrame>();
      check_frame(layout, codes);
      s.frames.push_back({std::move(codes), index++});
    }
    if (j.contains("labels")) {
      for (const Json& l : j.at("labels")) {
        const int v = l.get<int>();
        if (v != 0 && v != 1) throw FormatError("labels must be 0 or 1");
        s.labels.push_back(static_cast<Status>(v));
      }
    } else {
      s.labels.assign(s.frames.size(), Status::kNirq);
    }
    auto span = [&](const char* key) {
      if (!j.contains(key)) return Span{};
      const auto v = j.at(key).get<std::vector<int>>();
      if (v.size() != 2) throw FormatError(std::string(key) + " must have two entries");
      return Span{v[0], v[1]};
    };
    s.marker_span = span("marker_span");
    s.tail_span = span("tail_span");
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad interrupt sample: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError(std::string("bad interrupt sample: ") + e.what());
  }
  const int n = static_cast<int>(s.frames.size());
  if (static_cast<int>(s.labels.size()) != n) {
    throw FormatError("interrupt sample has " + std::to_string(s.labels.size()) +
                      " labels for " + std::to_string(n) + " frames");
  }
  const bool spans_ok = 0 <= s.marker_span.begin && s.marker_span.begin <= s.marker_span.end &&
                        s.marker_span.end <= s.tail_span.begin &&
                        s.tail_span.begin <= s.tail_span.end && s.tail_span.end <= n;
  if (!spans_ok && !(s.marker_span == Span{} && s.tail_span == Span{})) {
    throw FormatError("interrupt sample spans are out of order or out of range");
  }
  return s;
}

std::vector<TokenId> frame_column(const VocabLayout& layout, const AudioFrame& codes) {
  check_frame(layout, codes);
  std::vector<TokenId> col;
  col.reserve(static_cast<size_t>(layout.row_count()));
  col.push_back(pad_id(layout, 0));
  for (int k = 1; k <= layout.audio_layer_count; ++k) {
    col.push_back(global_id(layout, k, codes[k - 1]));
  }
  return col;
}

MotifDetector::MotifDetector(std::vector<AudioFrame> motif) : motif_(std::move(motif)) {
  if (motif_.empty()) throw InvalidArgument("motif detector needs a non-empty motif");
}

void MotifDetector::reset() {
  window_.clear();
  latched_ = false;
}

Status MotifDetector::ingest(const StreamFrame& frame) {
  const Status out = latched_ ? Status::kIrq : Status::kNirq;
  window_.push_back(frame.codes);
  if (window_.size() > motif_.size()) window_.pop_front();
  if (window_.size() == motif_.size() &&
      std::equal(window_.begin(), window_.end(), motif_.begin())) {
    latched_ = true;
  }
  return out;
}

ModelDetector::ModelDetector(const Model& model) : model_(model) {
  const VocabLayout& layout = model.layout();
  const std::vector<TokenId> col = marker_column(layout, TaskKind::kInterrupt);
  marker_ = model.embed_column(col);
  reset();
}

void ModelDetector::reset() {
  state_ = model_.new_state();
  model_.decode(state_, marker_);
}

Status ModelDetector::ingest(const StreamFrame& frame) {
  if (state_.length >= model_.config().context_length) reset();
  const VocabLayout& layout = model_.layout();
  const MatF x = model_.embed_column(frame_column(layout, frame.codes));
  const std::vector<MatF> logits = model_.decode(state_, x);
  const TokenId irq = control_id(layout, {ControlKind::kIrq, 0});
  const TokenId nirq = control_id(layout, {ControlKind::kNirq, 0});
  return logits[0](0, irq) > logits[0](0, nirq) ? Status::kIrq : Status::kNirq;
}

DuplexEngine::DuplexEngine(std::unique_ptr<StatusDetector> detector)
    : detector_(std::move(detector)) {}

void DuplexEngine::submit_query(std::unique_ptr<GenerationSession> session) {
  if (!session) throw InvalidArgument("submit_query needs a generation session");
  session_ = std::move(session);
  halted_ = false;
  mode_ = DuplexMode::kSpeaking;
  if (detector_) detector_->reset();
}

Status DuplexEngine::ingest_frame(const StreamFrame& frame) {
  if (!detector_) throw RuntimeFailure("duplex engine has no status detector");
  const Status status = detector_->ingest(frame);
  status_log_.push_back(status);
  if (status == Status::kIrq && mode_ == DuplexMode::kSpeaking) {
    mode_ = DuplexMode::kListening;
    halted_ = true;
  }
  return status;
}

std::optional<std::vector<TokenId>> DuplexEngine::next_column() {
  if (halted_ || !session_ || session_->finished()) return std::nullopt;
  return session_->step();
}

FrameSource frames_source(std::vector<StreamFrame> frames) {
  auto state = std::make_shared<std::pair<std::vector<StreamFrame>, size_t>>(
      std::move(frames), 0);
  return [state]() -> std::optional<StreamFrame> {
    if (state->second >= state->first.size()) return std::nullopt;
    return state->first[state->second++];
  };
}

FrameQueue::FrameQueue(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw InvalidArgument("frame queue capacity must be positive");
}

void FrameQueue::push(StreamFrame frame) {
  std::unique_lock lock(mutex_);
  not_full_.wait(lock, [&] { return items_.size() < capacity_ || closed_; });
  if (closed_) throw RuntimeFailure("push on a closed frame queue");
  items_.push_back(std::move(frame));
  not_empty_.notify_one();
}

void FrameQueue::close() {
  std::lock_guard lock(mutex_);
  closed_ = true;
  not_empty_.notify_all();
  not_full_.notify_all();
}

std::optional<StreamFrame> FrameQueue::pop() {
  std::unique_lock lock(mutex_);
  not_empty_.wait(lock, [&] { return !items_.empty() || closed_; });
  if (items_.empty()) return std::nullopt;
  StreamFrame f = std::move(items_.front());
  items_.pop_front();
  not_full_.notify_one();
  return f;
}

FrameSource FrameQueue::source() {
  return [this] { return pop(); };
}

DuplexTranscript run_duplex_session(DuplexEngine& engine, const FrameSource& input,
                                    std::unique_ptr<GenerationSession> session) {
  engine.submit_query(std::move(session));
  const size_t log_start = engine.status_log().size();
  DuplexTranscript out;
  bool stream_open = static_cast<bool>(input);
  for (int step = 0;; ++step) {
    if (stream_open) {
      if (std::optional<StreamFrame> frame = input()) {
        engine.ingest_frame(*frame);
        if (engine.mode() == DuplexMode::kListening) {
          out.stop_step = step;
          break;
        }
      } else {
        stream_open = false;
      }
    }
    std::optional<std::vector<TokenId>> column = engine.next_column();
    if (!column) break;
    out.columns.push_back(std::move(*column));
    if (!engine.producing()) {
      out.finished = true;
      break;
    }
  }
  out.status_log.assign(engine.status_log().begin() + static_cast<std::ptrdiff_t>(log_start),
                        engine.status_log().end());
  return out;
}

DuplexMetrics score_statuses(const std::vector<InterruptSample>& samples,
                             const std::vector<std::vector<Status>>& predicted,
                             const std::vector<std::vector<Status>>& noise_predicted) {
  if (predicted.size() != samples.size()) {
    throw InvalidArgument("one status sequence per sample is required");
  }
  DuplexMetrics m;
  int64_t correct = 0;
  int64_t tail_frames = 0;
  int64_t tail_hits = 0;
  int64_t latency_sum = 0;
  int latency_count = 0;
  int64_t fallback_frames = 0;
  int64_t fallback_irq = 0;
  for (size_t i = 0; i < samples.size(); ++i) {
    const InterruptSample& s = samples[i];
    const std::vector<Status>& p = predicted[i];
    if (p.size() != s.labels.size()) {
      throw InvalidArgument("status sequence length differs from its sample");
    }
    m.frames += static_cast<int64_t>(p.size());
    for (size_t t = 0; t < p.size(); ++t) correct += p[t] == s.labels[t];
    for (int t = s.tail_span.begin; t < s.tail_span.end; ++t) {
      ++tail_frames;
      tail_hits += p[t] == Status::kIrq;
    }
    for (int t = 0; t < s.marker_span.begin; ++t) {
      ++fallback_frames;
      fallback_irq += p[t] == Status::kIrq;
    }
    const auto first = std::find(p.begin(), p.end(), Status::kIrq);
    const int first_irq = static_cast<int>(first - p.begin());
    if (first != p.end() && first_irq < s.marker_span.end) ++m.early_triggers;
    if (s.tail_span.size() == 0) continue;
    const auto after = std::find(p.begin() + s.marker_span.end, p.begin() + s.tail_span.end,
                                 Status::kIrq);
    if (after == p.begin() + s.tail_span.end) {
      ++m.misses;
      latency_sum += s.tail_span.size();
    } else {
      latency_sum += (after - p.begin()) - s.marker_span.end;
    }
    ++latency_count;
  }
  m.frame_accuracy = m.frames > 0 ? static_cast<double>(correct) / m.frames : 0.0;
  m.irq_recall = tail_frames > 0 ? static_cast<double>(tail_hits) / tail_frames : 0.0;
  m.mean_latency = latency_count > 0 ? static_cast<double>(latency_sum) / latency_count : 0.0;
  if (!noise_predicted.empty()) {
    int64_t frames = 0;
    int64_t irq = 0;
    for (const auto& p : noise_predicted) {
      frames += static_cast<int64_t>(p.size());
      irq += std::count(p.begin(), p.end(), Status::kIrq);
    }
    m.false_trigger_rate = frames > 0 ? static_cast<double>(irq) / frames : 0.0;
  } else {
    // Without dedicated noise streams, use the noise before each stop phrase.
    m.false_trigger_rate =
        fallback_frames > 0 ? static_cast<double>(fallback_irq) / fallback_frames : 0.0;
  }
  return m;
}

DuplexMetrics evaluate_duplex(StatusDetector& detector,
                              const std::vector<InterruptSample>& samples,
                              const std::vector<std::vector<StreamFrame>>& noise_streams) {
  auto run = [&](const std::vector<StreamFrame>& frames) {
    detector.reset();
    std::vector<Status> out;
    out.reserve(frames.size());
    for (const auto& f : frames) out.push_back(detector.ingest(f));
    return out;
  };
  std::vector<std::vector<Status>> predicted;
  for (const auto& s : samples) predicted.push_back(run(s.frames));
  std::vector<std::vector<Status>> noise;
  for (const auto& n : noise_streams) noise.push_back(run(n));
  return score_statuses(samples, predicted, noise);
}

std::string metrics_to_json(const DuplexMetrics& m) {
  return Json{{"frame_accuracy", m.frame_accuracy},
              {"false_trigger_rate", m.false_trigger_rate},
              {"irq_recall", m.irq_recall},
              {"mean_latency", m.mean_latency},
              {"early_triggers", m.early_triggers},
              {"misses", m.misses},
              {"frames", m.frames}}
      .dump();
}

}  // namespace omni
