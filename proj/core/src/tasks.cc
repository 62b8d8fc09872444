// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/tasks.h"

#include <fstream>
#include <set>

#include "json_io.h"
#include "omni/error.h"
#include "omni/rng.h"

namespace omni {
namespace {

std::vector<int> decode_words(const VocabLayout& layout, const std::vector<AudioFrame>& audio,
                              int word_vocab) {
  std::vector<int> words;
  for (const AudioFrame& f : audio) {
    int found = -1;
    for (int w = 0; w < word_vocab && found < 0; ++w) {
      if (speak(layout, w) == f) found = w;
    }
    if (found < 0) throw InvalidArgument("audio frame is not a spoken word");
    words.push_back(found);
  }
  return words;
}

TokenGrid answer_grid(const VocabLayout& layout, const std::vector<int>& answer,
                      bool audio_out) {
  const int n = static_cast<int>(answer.size());
  TokenGrid g(layout.row_count(), n + 1);
  for (int r = 0; r < layout.row_count(); ++r) {
    for (int t = 0; t <= n; ++t) g.at(r, t) = pad_id(layout, r);
  }
  for (int t = 0; t < n; ++t) g.at(0, t) = answer[t];
  g.at(0, n) = end_id(layout, 0);
  if (audio_out) {
    for (int t = 0; t < n; ++t) {
      const AudioFrame f = speak(layout, answer[t]);
      for (int k = 1; k <= layout.audio_layer_count; ++k) {
        g.at(k, t) = global_id(layout, k, f[k - 1]);
      }
    }
    for (int k = 1; k <= layout.audio_layer_count; ++k) g.at(k, n) = end_id(layout, k);
  }
  return g;
}

Json options_json(const TaskOptions& o) {
  return Json{{"word_vocab", o.word_vocab},
              {"min_words", o.min_words},
              {"max_words", o.max_words},
              {"frame_rate", o.frame_rate},
              {"phrase_substitution", o.phrase_substitution},
              {"noise_min_frames", o.interrupt.noise_min_frames},
              {"noise_max_frames", o.interrupt.noise_max_frames},
              {"tail_max_seconds", o.interrupt.tail_max_seconds}};
}

TaskOptions options_from(const Json& j) {
  TaskOptions o;
  o.word_vocab = j.at("word_vocab").get<int>();
  o.min_words = j.at("min_words").get<int>();
  o.max_words = j.at("max_words").get<int>();
  o.frame_rate = j.at("frame_rate").get<double>();
  o.phrase_substitution = j.at("phrase_substitution").get<double>();
  o.interrupt.noise_min_frames = j.at("noise_min_frames").get<int>();
  o.interrupt.noise_max_frames = j.at("noise_max_frames").get<int>();
  o.interrupt.tail_max_seconds = j.at("tail_max_seconds").get<double>();
  return o;
}

}  // namespace

void TaskOptions::validate(const VocabLayout& layout) const {
  if (!supports_controls(layout)) {
    throw InvalidArgument("synthetic tasks need a layout with control tokens");
  }
  if (word_vocab < kSceneVocab || word_vocab > layout.text_region_size - kReservedTextIds ||
      word_vocab > layout.audio_code_count) {
    throw InvalidArgument("word vocabulary must cover the scene objects and fit the layout");
  }
  if (min_words < 1 || max_words < min_words) {
    throw InvalidArgument("question length range is empty");
  }
  if (!(frame_rate > 0.0) || phrase_substitution < 0.0 || phrase_substitution > 1.0) {
    throw InvalidArgument("bad interrupt stream options");
  }
  std::set<AudioFrame> seen;
  for (int w = 0; w < word_vocab; ++w) {
    if (!seen.insert(speak(layout, w)).second) {
      throw InvalidArgument("word pronunciations collide under this layout");
    }
  }
}

AudioFrame speak(const VocabLayout& layout, int word) {
  AudioFrame f(static_cast<size_t>(layout.audio_layer_count));
  const int64_t codes = layout.audio_code_count;
  for (int k = 1; k <= layout.audio_layer_count; ++k) {
    const int64_t a = 2 * k + 3;
    const int64_t b = 5 * k + 1;
    f[k - 1] = static_cast<int32_t>((a * word + b) % codes);
  }
  return f;
}

std::vector<AudioFrame> speak(const VocabLayout& layout, std::span<const int> words) {
  std::vector<AudioFrame> out;
  out.reserve(words.size());
  for (int w : words) out.push_back(speak(layout, w));
  return out;
}

int qa_answer(int word, int word_vocab) { return (7 * word + 11) % word_vocab; }

int visual_answer(int word, const std::array<int, kSceneObjects>& scene) {
  return scene[static_cast<size_t>(word % kSceneObjects)];
}

TokenGrid expected_target(const VocabLayout& layout, const InputBundle& input,
                          const TaskOptions& options) {
  const int W = options.word_vocab;
  std::vector<int> answer;
  auto need_image = [&] {
    if (!input.image_seed) throw InvalidArgument("task needs an image");
    return vision_scene(*input.image_seed);
  };
  switch (input.task) {
    case TaskKind::kAsr:
      answer = decode_words(layout, input.audio, W);
      break;
    case TaskKind::kTextQa:
      for (TokenId t : input.text) {
        if (t < 0 || t >= W) throw InvalidArgument("text token is not a word");
        answer.push_back(qa_answer(t, W));
      }
      break;
    case TaskKind::kAudioQaTextOut:
    case TaskKind::kAudioQaAudioOut:
      for (int w : decode_words(layout, input.audio, W)) answer.push_back(qa_answer(w, W));
      break;
    case TaskKind::kVisualQaTextOut:
    case TaskKind::kVisualQaAudioOut: {
      const auto scene = need_image();
      for (int w : decode_words(layout, input.audio, W)) {
        answer.push_back(visual_answer(w, scene));
      }
      break;
    }
    case TaskKind::kImageCaption: {
      const auto scene = need_image();
      answer.assign(scene.begin(), scene.end());
      break;
    }
    case TaskKind::kInterrupt:
      throw InvalidArgument("interrupt targets come from stream labels");
  }
  if (answer.empty()) throw InvalidArgument("task input is empty");
  return answer_grid(layout, answer, task_emits_audio(input.task));
}

TaskSample gen_task_sample(const VocabLayout& layout, TaskKind kind, uint64_t seed,
                           int64_t index, const TaskOptions& options) {
  options.validate(layout);
  Rng rng(mix64(seed, static_cast<uint64_t>(kind), static_cast<uint64_t>(index)));
  TaskSample s;
  s.input.task = kind;
  if (kind == TaskKind::kInterrupt) {
    InterruptSample stream =
        build_interrupt_dataset(rng.next(), 1, options.frame_rate,
                                stop_phrase_generator(layout, options.phrase_substitution),
                                background_noise_generator(layout), options.interrupt)
            .front();
    const int n = static_cast<int>(stream.frames.size());
    s.target = TokenGrid(layout.row_count(), n);
    for (int r = 0; r < layout.row_count(); ++r) {
      for (int t = 0; t < n; ++t) s.target.at(r, t) = pad_id(layout, r);
    }
    for (int t = 0; t < n; ++t) {
      s.target.at(0, t) = control_id(
          layout, {stream.labels[t] == Status::kIrq ? ControlKind::kIrq : ControlKind::kNirq, 0});
      s.input.audio.push_back(stream.frames[t].codes);
    }
    s.interrupt = std::move(stream);
    return s;
  }
  const int n = static_cast<int>(rng.range(options.min_words, options.max_words));
  std::vector<int> words;
  for (int i = 0; i < n; ++i) {
    words.push_back(static_cast<int>(rng.below(static_cast<uint64_t>(options.word_vocab))));
  }
  switch (kind) {
    case TaskKind::kTextQa:
      s.input.text.assign(words.begin(), words.end());
      break;
    case TaskKind::kImageCaption:
      s.input.image_seed = rng.next();
      break;
    case TaskKind::kVisualQaTextOut:
    case TaskKind::kVisualQaAudioOut:
      s.input.image_seed = rng.next();
      // A visual question is one spoken slot name.
      words.assign(1, words.front() % kSceneObjects);
      s.input.audio = speak(layout, words);
      break;
    default:
      s.input.audio = speak(layout, words);
      break;
  }
  s.target = expected_target(layout, s.input, options);
  return s;
}

std::vector<TaskSample> gen_task_data(const VocabLayout& layout, const SyntheticTask& task,
                                      const TaskOptions& options) {
  if (task.size < 0) throw InvalidArgument("dataset size must be non-negative");
  std::vector<TaskSample> out;
  out.reserve(static_cast<size_t>(task.size));
  for (int i = 0; i < task.size; ++i) {
    out.push_back(gen_task_sample(layout, task.kind, task.seed, i, options));
  }
  return out;
}

Dataset make_dataset(const VocabLayout& layout, const SyntheticTask& task,
                     const TaskOptions& options) {
  return Dataset{layout, task, options, gen_task_data(layout, task, options)};
}

void write_dataset(std::ostream& out, const Dataset& d) {
  const Json header{{"header",
                     {{"layout", layout_json(d.layout)},
                      {"task", std::string(task_name(d.task.kind))},
                      {"seed", d.task.seed},
                      {"size", d.task.size},
                      {"options", options_json(d.options)}}}};
  out << header.dump() << '\n';
  for (const TaskSample& s : d.samples) {
    Json input{{"audio", s.input.audio}, {"text", s.input.text}};
    input["image_seed"] = s.input.image_seed ? Json(*s.input.image_seed) : Json(nullptr);
    Json line{{"task", std::string(task_name(s.input.task))},
              {"input", input},
              {"target", {{"rows", s.target.to_rows()}}}};
    if (s.interrupt) {
      const Json extra = Json::parse(interrupt_sample_to_json_line(*s.interrupt));
      for (const auto& [k, v] : extra.items()) line[k] = v;
    }
    out << line.dump() << '\n';
  }
  if (!out) throw RuntimeFailure("failed writing dataset");
}

Dataset read_dataset(std::istream& in) {
  Dataset d;
  std::string line;
  int line_no = 0;
  try {
    if (!std::getline(in, line)) throw FormatError("dataset is empty");
    ++line_no;
    const Json parsed = Json::parse(line);
    const Json& h = parsed.at("header");
    d.layout = layout_from(h.at("layout"));
    const auto kind = parse_task(h.at("task").get<std::string>());
    if (!kind) throw FormatError("unknown task in dataset header");
    d.task = {*kind, h.at("seed").get<uint64_t>(), h.at("size").get<int>()};
    d.options = options_from(h.at("options"));
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const Json j = Json::parse(line);
      TaskSample s;
      const auto task = parse_task(j.at("task").get<std::string>());
      if (!task) throw FormatError("unknown task");
      s.input.task = *task;
      const Json& input = j.at("input");
      if (!input.at("image_seed").is_null()) s.input.image_seed = input.at("image_seed").get<uint64_t>();
      s.input.audio = input.at("audio").get<std::vector<AudioFrame>>();
      s.input.text = input.at("text").get<std::vector<TokenId>>();
      s.target = TokenGrid::from_rows(
          j.at("target").at("rows").get<std::vector<std::vector<TokenId>>>());
      validate_grid(s.target, d.layout);
      if (s.input.task == TaskKind::kInterrupt) {
        s.interrupt = interrupt_sample_from_json_line(line, d.layout);
      }
      d.samples.push_back(std::move(s));
    }
  } catch (const Json::exception& e) {
    throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw FormatError("dataset line " + std::to_string(line_no) + ": " + e.what());
  }
  return d;
}

void save_dataset(const std::string& path, const Dataset& dataset) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw RuntimeFailure("cannot write dataset " + path);
  write_dataset(out, dataset);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path);
  return read_dataset(in);
}

std::optional<FeatureSequence> vision_features(const ModelConfig& config,
                                               const InputBundle& input) {
  if (!input.image_seed) return std::nullopt;
  return stub_vision_encode(*input.image_seed, config.vision_feature_width);
}

std::optional<FeatureSequence> audio_features(const ModelConfig& config,
                                              const InputBundle& input) {
  if (input.audio.empty() || input.task == TaskKind::kInterrupt) return std::nullopt;
  return stub_audio_encode(input.audio, config.audio_feature_width);
}

InputPlan sample_plan(const VocabLayout& layout, const InputBundle& input) {
  if (input.task == TaskKind::kInterrupt) {
    InputPlan plan;
    plan.steps.push_back(
        {StepSource::kResponseMarker, -1, marker_column(layout, TaskKind::kInterrupt)});
    return plan;
  }
  return plan_input(layout, input.image_seed ? kVisionSequenceLength : 0,
                    static_cast<int>(input.audio.size()), input.text, input.task);
}

TrainingExample make_training_example(const ModelConfig& config, const TaskSample& sample) {
  const VocabLayout& layout = config.vocab;
  validate_grid(sample.target, layout);
  if (sample.input.task == TaskKind::kInterrupt) {
    TrainingExample ex;
    ex.plan = sample_plan(layout, sample.input);
    for (const AudioFrame& f : sample.input.audio) {
      ex.plan.steps.push_back({StepSource::kTokenColumn, -1, frame_column(layout, f)});
    }
    const int rows = layout.row_count();
    ex.targets.assign(static_cast<size_t>(ex.plan.length()) * rows, -1);
    for (int t = 0; t < sample.target.length(); ++t) {
      ex.targets[static_cast<size_t>(t + 1) * rows] = sample.target.at(0, t);
    }
    return ex;
  }
  const DelayedGrid delayed = apply_delay(sample.target, layout);
  const CellMask mask = mask_targets(delayed);
  return teacher_forced_example(layout, sample_plan(layout, sample.input),
                                vision_features(config, sample.input),
                                audio_features(config, sample.input), delayed, mask);
}

}  // namespace omni
