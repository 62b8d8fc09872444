// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

#include "omni/cli.h"

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json_io.h"
#include "omni/checkpoint.h"
#include "omni/duplex.h"
#include "omni/error.h"
#include "omni/generate.h"
#include "omni/tasks.h"
#include "omni/training.h"

namespace omni {
namespace {

uint64_t default_seed() {
  if (const char* env = std::getenv("OMNI_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw InvalidArgument(std::string("OMNI_SEED is not an integer: ") + env);
    }
  }
  return 0;
}

ModelConfig model_config_for(Scale scale) {
  return scale == Scale::kDesk ? desk_model_config() : paper_model_config();
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

// A prefix line is a dataset sample line or just {"task", "input"}.
InputBundle bundle_from_line(const std::string& line) {
  try {
    const Json j = Json::parse(line);
    InputBundle b;
    const auto task = parse_task(j.at("task").get<std::string>());
    if (!task) throw FormatError("unknown task in prefix");
    b.task = *task;
    const Json& in = j.at("input");
    if (in.contains("image_seed") && !in.at("image_seed").is_null()) {
      b.image_seed = in.at("image_seed").get<uint64_t>();
    }
    if (in.contains("audio")) b.audio = in.at("audio").get<std::vector<AudioFrame>>();
    if (in.contains("text")) b.text = in.at("text").get<std::vector<TokenId>>();
    return b;
  } catch (const Json::exception& e) {
    throw FormatError(std::string("bad prefix line: ") + e.what());
  }
}

bool is_header(const std::string& line) {
  return line.find("\"header\"") != std::string::npos &&
         Json::parse(line, nullptr, false).contains("header");
}

std::optional<TaskKind> text_variant(TaskKind t) {
  switch (t) {
    case TaskKind::kAudioQaAudioOut: return TaskKind::kAudioQaTextOut;
    case TaskKind::kVisualQaAudioOut: return TaskKind::kVisualQaTextOut;
    default: return std::nullopt;
  }
}

Json grid_json(const GenerationResult& r) {
  return Json{{"rows", r.grid.to_rows()},
              {"truncated", r.truncated},
              {"steps", r.columns.size()}};
}

struct Options {
  // data-gen
  std::string task;
  int size = 100;
  std::optional<uint64_t> seed;
  std::string scale = "desk";
  std::string out_path;
  int word_vocab = 48;
  int min_words = 4;
  int max_words = 6;
  // train
  int stage = 1;
  std::string init;
  std::optional<int> steps;
  std::optional<int> batch;
  std::optional<double> lr_scale;
  int log_every = 100;
  // generate / duplex / eval / inspect
  std::string checkpoint;
  std::string prefix;
  std::string vision_features;
  std::string audio_features;
  int max_steps = 256;
  bool sample = false;
  float temperature = 0.8f;
  int top_k = 40;
  bool batch_parallel = false;
  std::string stream;
  std::string query;
  bool stub = false;
  std::string data;
};

TaskOptions task_options(const Options& o) {
  TaskOptions t;
  t.word_vocab = o.word_vocab;
  t.min_words = o.min_words;
  t.max_words = o.max_words;
  return t;
}

int run_data_gen(const Options& o, std::ostream& out) {
  const auto kind = parse_task(o.task);
  if (!kind) throw InvalidArgument("unknown task '" + o.task + "'");
  const Scale scale = *parse_scale(o.scale);
  const ModelConfig config = model_config_for(scale);
  const SyntheticTask task{*kind, o.seed.value_or(default_seed()), o.size};
  save_dataset(o.out_path, make_dataset(config.vocab, task, task_options(o)));
  out << "wrote " << o.size << " " << task_name(*kind) << " samples to " << o.out_path << '\n';
  return 0;
}

int run_train(const Options& o, std::ostream& out) {
  const Scale scale = *parse_scale(o.scale);
  StageConfig config = default_stage_configs(scale)[static_cast<size_t>(o.stage - 1)];
  const uint64_t seed = o.seed.value_or(default_seed());
  config.seed = mix64(seed, static_cast<uint64_t>(o.stage));
  if (o.steps) config.steps = *o.steps;
  if (o.batch) config.batch_size = *o.batch;
  if (o.lr_scale) config.lr_scale = *o.lr_scale;
  config.validate();
  std::optional<Model> model;
  StageRunOptions run;
  if (!o.init.empty()) {
    LoadedCheckpoint ck = load_checkpoint(o.init);
    if (ck.meta.stage != o.stage - 1) {
      throw InvalidArgument("stage " + std::to_string(o.stage) +
                            " must start from a stage " + std::to_string(o.stage - 1) +
                            " checkpoint, got stage " + std::to_string(ck.meta.stage));
    }
    model.emplace(std::move(ck.model));
    run.parent = ck.meta;
  } else {
    if (o.stage != 1) throw InvalidArgument("stages 2 and 3 need --init");
    model.emplace(model_config_for(scale), seed);
    run.parent.lineage.push_back({0, params_hash(model->params())});
  }
  run.checkpoint_path = o.out_path;
  run.on_step = [&](int step, double loss, double lr) {
    if (o.log_every > 0 && (step % o.log_every == 0 || step + 1 == config.steps)) {
      out << "step " << step << " loss " << loss << " lr " << lr << '\n' << std::flush;
    }
  };
  StageData data;
  data.options = task_options(o);
  const RunRecord record = run_stage(config, *model, data, run);
  std::ofstream rec(o.out_path + ".run.json");
  rec << run_record_to_json(record) << '\n';
  if (!rec) throw RuntimeFailure("cannot write run record");
  if (record.aborted) throw RuntimeFailure(record.abort_reason);
  out << "stage " << o.stage << " done in " << record.wall_seconds << " s; checkpoint "
      << o.out_path << '\n';
  return 0;
}

int run_generate(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  Model& model = ck.model;
  std::optional<FeatureSequence> vision_override;
  std::optional<FeatureSequence> audio_override;
  if (!o.vision_features.empty()) vision_override = load_features(o.vision_features);
  if (!o.audio_features.empty()) audio_override = load_features(o.audio_features);
  GenerationLimits limits;
  limits.max_steps = o.max_steps;
  SamplingConfig sampling = model.config().sampling;
  sampling.greedy = !o.sample;
  sampling.temperature = o.temperature;
  sampling.top_k = o.top_k;
  ModelConfig config = model.config();
  config.sampling = sampling;
  Model sampler_model(config, model.params());
  const uint64_t seed = o.seed.value_or(default_seed());
  for (const std::string& line : read_lines(o.prefix)) {
    if (is_header(line)) continue;
    const InputBundle b = bundle_from_line(line);
    if (b.task == TaskKind::kInterrupt) throw InvalidArgument("interrupt streams go to duplex");
    auto vision = vision_override ? vision_override : vision_features(config, b);
    auto audio = audio_override ? audio_override : audio_features(config, b);
    const int vision_len = vision ? vision->length() : 0;
    const int audio_len = audio ? audio->length() : 0;
    const InputPlan plan = plan_input(config.vocab, vision_len, audio_len, b.text, b.task);
    const EffectiveInputSequence prefix = prefix_input(sampler_model, plan, vision, audio);
    if (o.batch_parallel) {
      const auto text_task = text_variant(b.task);
      if (!text_task) {
        throw InvalidArgument("batch-parallel decoding needs an audio-output task");
      }
      const InputPlan b_plan =
          plan_input(config.vocab, vision_len, audio_len, b.text, *text_task);
      const EffectiveInputSequence b_prefix = prefix_input(sampler_model, b_plan, vision, audio);
      const BatchParallelResult r =
          batch_parallel_generate(sampler_model, prefix, b_prefix, limits, {}, seed);
      out << Json{{"rows", r.grid.to_rows()}, {"truncated", r.a.truncated}}.dump() << '\n';
      continue;
    }
    limits.audio_output = task_emits_audio(b.task);
    out << grid_json(generate(sampler_model, prefix, limits, seed)).dump() << '\n';
  }
  return 0;
}

int run_duplex(const Options& o, std::ostream& out) {
  if (o.checkpoint.empty() && !o.stub) {
    throw InvalidArgument("duplex needs --checkpoint or --stub");
  }
  const uint64_t seed = o.seed.value_or(default_seed());
  std::optional<Model> model;
  if (!o.checkpoint.empty()) {
    model.emplace(load_checkpoint(o.checkpoint).model);
  } else {
    model.emplace(desk_model_config(), seed);
  }
  const VocabLayout& layout = model->layout();
  InputBundle query;
  if (!o.query.empty()) {
    const auto lines = read_lines(o.query);
    for (const auto& l : lines) {
      if (!is_header(l)) {
        query = bundle_from_line(l);
        break;
      }
    }
  } else {
    query = gen_task_sample(layout, TaskKind::kAudioQaAudioOut, seed, 0).input;
  }
  const InputPlan plan = sample_plan(layout, query);
  const EffectiveInputSequence prefix =
      prefix_input(*model, plan, vision_features(model->config(), query),
                   audio_features(model->config(), query));
  GenerationLimits limits;
  limits.max_steps = o.max_steps;
  limits.audio_output = task_emits_audio(query.task);
  for (const std::string& line : read_lines(o.stream)) {
    if (is_header(line)) continue;
    const InterruptSample sample = interrupt_sample_from_json_line(line, layout);
    std::unique_ptr<StatusDetector> detector;
    if (o.stub) {
      detector = std::make_unique<MotifDetector>(stop_motif(layout));
    } else {
      detector = std::make_unique<ModelDetector>(*model);
    }
    DuplexEngine engine(std::move(detector));
    const DuplexTranscript t = run_duplex_session(
        engine, frames_source(sample.frames),
        std::make_unique<GenerationSession>(*model, prefix, limits, seed));
    Json status = Json::array();
    for (Status s : t.status_log) status.push_back(s == Status::kIrq ? "irq" : "n-irq");
    out << Json{{"status", status},
                {"columns_emitted", t.columns.size()},
                {"stop_step", t.stop_step ? Json(*t.stop_step) : Json(nullptr)},
                {"marker_end", sample.marker_span.end},
                {"finished", t.finished}}
               .dump()
        << '\n';
  }
  return 0;
}

int run_eval(const Options& o, std::ostream& out) {
  LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  std::vector<Dataset> datasets;
  if (!o.data.empty()) {
    datasets.push_back(load_dataset(o.data));
  } else {
    const uint64_t seed = o.seed.value_or(default_seed());
    std::vector<TaskKind> kinds;
    if (o.task == "all") {
      kinds.assign(kAllTasks.begin(), kAllTasks.end());
    } else {
      const auto kind = parse_task(o.task);
      if (!kind) throw InvalidArgument("unknown task '" + o.task + "'");
      kinds.push_back(*kind);
    }
    for (TaskKind k : kinds) {
      datasets.push_back(make_dataset(ck.model.layout(), {k, seed, o.size}, task_options(o)));
    }
  }
  out << metrics_to_json(evaluate(ck.model, datasets)) << '\n';
  return 0;
}

int run_inspect(const Options& o, std::ostream& out) {
  const LoadedCheckpoint ck = load_checkpoint(o.checkpoint);
  Json header = Json::parse(checkpoint_header(o.checkpoint));
  Json counts = Json::object();
  for (ParamGroup g : kAllGroups) counts[std::string(group_name(g))] = 0;
  for (const auto& t : ck.model.params().tensors()) {
    counts[std::string(group_name(t.group))] =
        counts[std::string(group_name(t.group))].get<int64_t>() + t.value->size();
  }
  header["parameter_counts"] = counts;
  header["params_hash"] = params_hash(ck.model.params());
  out << header.dump(2) << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  Options o;
  CLI::App app{"omnistream: multimodal token streaming model toolkit", "omni"};
  app.require_subcommand(1);
  app.option_defaults()->always_capture_default();
  const auto seed_opt = [&](CLI::App* c) {
    c->add_option("--seed", o.seed, "RNG seed (default: $OMNI_SEED or 0)");
  };
  const auto scale_opt = [&](CLI::App* c) {
    c->add_option("--scale", o.scale, "desk or paper")
        ->check(CLI::IsMember({"desk", "paper"}));
  };
  const auto word_opts = [&](CLI::App* c) {
    c->add_option("--word-vocab", o.word_vocab, "synthetic word vocabulary size");
    c->add_option("--min-words", o.min_words, "shortest question");
    c->add_option("--max-words", o.max_words, "longest question");
  };

  CLI::App* gen = app.add_subcommand("data-gen", "write a synthetic task dataset (JSONL)");
  gen->add_option("--task", o.task, "task kind")->required();
  gen->add_option("--size", o.size, "number of samples")->check(CLI::NonNegativeNumber);
  gen->add_option("--out", o.out_path, "output path")->required();
  seed_opt(gen);
  scale_opt(gen);
  word_opts(gen);

  CLI::App* train = app.add_subcommand("train", "run one training stage");
  train->add_option("--stage", o.stage, "stage 1, 2 or 3")->required()->check(CLI::Range(1, 3));
  train->add_option("--out", o.out_path, "checkpoint path; the run record goes to <out>.run.json")
      ->required();
  train->add_option("--init", o.init, "checkpoint of the previous stage");
  train->add_option("--steps", o.steps, "override the step budget");
  train->add_option("--batch", o.batch, "override the batch size");
  train->add_option("--lr-scale", o.lr_scale, "override the learning-rate multiplier");
  train->add_option("--log-every", o.log_every, "loss print interval (0: quiet)");
  seed_opt(train);
  scale_opt(train);
  word_opts(train);

  CLI::App* generate = app.add_subcommand("generate", "decode answers for prefixes");
  generate->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  generate->add_option("--prefix", o.prefix, "JSONL of {task, input} lines")->required();
  generate->add_option("--vision-features", o.vision_features, "feature file for the image");
  generate->add_option("--audio-features", o.audio_features, "feature file for the audio");
  generate->add_option("--max-steps", o.max_steps, "column budget")->check(CLI::PositiveNumber);
  generate->add_flag("--sample", o.sample, "temperature / top-k sampling instead of greedy");
  generate->add_option("--temperature", o.temperature, "sampling temperature");
  generate->add_option("--top-k", o.top_k, "sampling top-k");
  generate->add_flag("--batch-parallel", o.batch_parallel,
                     "answer audio tasks with a text-only companion sample");
  seed_opt(generate);

  CLI::App* duplex = app.add_subcommand("duplex", "replay interrupt streams against a response");
  duplex->add_option("--stream", o.stream, "interrupt JSONL")->required();
  duplex->add_option("--checkpoint", o.checkpoint, "checkpoint path");
  duplex->add_flag("--stub", o.stub, "use the exact-match stop-phrase detector");
  duplex->add_option("--query", o.query, "JSONL whose first sample is the spoken query");
  duplex->add_option("--max-steps", o.max_steps, "column budget")->check(CLI::PositiveNumber);
  seed_opt(duplex);

  CLI::App* eval = app.add_subcommand("eval", "score a checkpoint on synthetic tasks");
  eval->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();
  eval->add_option("--task", o.task, "task kind or 'all'")->default_val("all");
  eval->add_option("--size", o.size, "samples per task")->default_val(50);
  eval->add_option("--data", o.data, "evaluate this dataset file instead");
  seed_opt(eval);
  word_opts(eval);

  CLI::App* inspect = app.add_subcommand("inspect", "print checkpoint config and manifest");
  inspect->add_option("--checkpoint", o.checkpoint, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }
  try {
    if (gen->parsed()) return run_data_gen(o, out);
    if (train->parsed()) return run_train(o, out);
    if (generate->parsed()) return run_generate(o, out);
    if (duplex->parsed()) return run_duplex(o, out);
    if (eval->parsed()) return run_eval(o, out);
    if (inspect->parsed()) return run_inspect(o, out);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

int cli_main(int argc, const char* const* argv) {
  return cli_main(argc, argv, std::cout, std::cerr);
}

}  // namespace omni
