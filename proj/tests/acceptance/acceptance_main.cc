// Copyright 2026 The omnistream Authors
// SPDX-License-Identifier: Apache-2.0

// End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "omni/assembly.h"
#include "omni/checkpoint.h"
#include "omni/delay_grid.h"
#include "omni/duplex.h"
#include "omni/generate.h"
#include "omni/grad_check.h"
#include "omni/model.h"
#include "omni/rng.h"
#include "omni/tasks.h"
#include "omni/training.h"
#include "omni/vocab.h"

#ifndef OMNI_CLI_PATH
#define OMNI_CLI_PATH "omni"
#endif

namespace omni {
namespace {

using Clock = std::chrono::steady_clock;
namespace fs = std::filesystem;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

// 1. Vocabulary bijection.
Outcome vocab_bijection() {
  const auto start = Clock::now();
  const VocabLayout v = default_layout();
  int64_t failures = 0;
  for (TokenId id = 0; id < v.total_size(); ++id) {
    const Coord c = locate(v, id);
    if (global_id(v, c.layer, c.local) != id) ++failures;
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << v.total_size() << " ids, " << failures << " failures, " << fmt("%.3f s", secs);
  return {failures == 0 && v.total_size() == 181120 && secs < 1.0, d.str()};
}

// 2. Delay round trip.
Outcome delay_round_trip() {
  const auto start = Clock::now();
  const VocabLayout v = desk_layout();
  const int rows = v.row_count();
  int64_t failures = 0;
  Rng rng(2);
  for (int i = 0; i < 10000; ++i) {
    const int T = static_cast<int>(rng.range(0, 64));
    TokenGrid g(rows, T);
    for (int r = 0; r < rows; ++r) {
      for (int t = 0; t < T; ++t) {
        g.at(r, t) = global_id(v, r, static_cast<int32_t>(rng.below(v.region_width(r))));
      }
    }
    if (undo_delay(apply_delay(g, v)) != g) ++failures;
  }
  int64_t exhaustive = 0;
  std::vector<std::array<TokenId, 2>> symbol(static_cast<size_t>(rows));
  for (int r = 0; r < rows; ++r) symbol[r] = {global_id(v, r, 0), global_id(v, r, 1)};
  for (int T = 0; T <= 3; ++T) {
    const int cells = rows * T;
    TokenGrid g(rows, T);
    for (uint32_t bits = 0; bits < (1u << cells); ++bits) {
      for (int i = 0; i < cells; ++i) g.at(i / T, i % T) = symbol[i / T][(bits >> i) & 1u];
      if (undo_delay(apply_delay(g, v)) != g) ++failures;
      ++exhaustive;
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << "10000 random + " << exhaustive << " exhaustive grids, " << failures << " failures, "
    << fmt("%.2f s", secs);
  return {failures == 0 && secs < 10.0, d.str()};
}

long double scalar_cross_entropy(const Model& m, const TrainingExample& ex) {
  const auto logits = m.forward(m.embed(ex));
  const VocabLayout& v = m.layout();
  const int rows = v.row_count();
  long double total = 0.0L;
  for (int t = 0; t < ex.plan.length(); ++t) {
    for (int r = 0; r < rows; ++r) {
      const TokenId target = ex.targets[static_cast<size_t>(t) * rows + r];
      if (target < 0) continue;
      long double mx = -INFINITY;
      for (int j = 0; j < logits[r].cols(); ++j) {
        mx = std::max<long double>(mx, logits[r](t, j));
      }
      long double sum = 0.0L;
      for (int j = 0; j < logits[r].cols(); ++j) sum += std::exp(logits[r](t, j) - mx);
      total += mx + std::log(sum) - logits[r](t, target - v.region_offset(r));
    }
  }
  return total;
}

// 3. Loss oracle.
Outcome loss_oracle() {
  const ModelConfig c = toy_model_config();
  double worst = 0.0;
  double worst_uniform = 0.0;
  for (uint64_t i = 0; i < 100; ++i) {
    Model m(c, 1000 + i);
    const TrainingExample ex = tiny_instance(c, 2000 + i);
    const double got = m.loss(ex).total;
    const double want = static_cast<double>(scalar_cross_entropy(m, ex));
    if (want > 0.0) worst = std::max(worst, std::abs(got - want) / want);

    for (auto& h : m.params().heads) h.setZero();
    const JointLoss uniform = m.loss(ex);
    double expect = 0.0;
    for (int r = 0; r < c.vocab.row_count(); ++r) {
      expect += static_cast<double>(uniform.token_counts[r]) * std::log(c.vocab.region_width(r));
    }
    if (expect > 0.0) {
      worst_uniform = std::max(worst_uniform, std::abs(uniform.total - expect) / expect);
    }
  }
  std::ostringstream d;
  d << "max relative error " << worst << ", uniform " << worst_uniform;
  return {worst < 1e-5 && worst_uniform < 1e-6, d.str()};
}

// 4. Gradient check.
Outcome gradient_check() {
  const auto start = Clock::now();
  std::vector<ModelConfig> configs;
  configs.push_back(toy_model_config());
  ModelConfig wide = toy_model_config();
  wide.d_model = 16;
  wide.n_trunk_layers = 2;
  wide.n_attn_heads = 4;
  configs.push_back(wide);
  double worst = 0.0;
  int checked = 0;
  std::string where;
  for (size_t ci = 0; ci < configs.size(); ++ci) {
    for (uint64_t s = 0; s < 4; ++s) {
      const OmniModel<double> m(configs[ci], 40 + s);
      const GradCheckResult r =
          grad_check(m, tiny_instance(configs[ci], 50 + s, 4), {.seed = s});
      checked += r.checked;
      if (r.max_relative_error > worst) {
        worst = r.max_relative_error;
        where = r.worst_tensor;
      }
    }
  }
  const double secs = seconds_since(start);
  std::ostringstream d;
  d << checked << " entries, max relative error " << worst << " (" << where << "), "
    << fmt("%.1f s", secs);
  return {worst < 1e-3 && checked > 0 && secs < 60.0, d.str()};
}

// The trained model shared by criteria 5 and 7.
struct Pipeline {
  std::optional<Model> model;
  std::vector<RunRecord> records;
  double seconds = 0.0;
};

Pipeline run_pipeline(uint64_t seed) {
  Pipeline p;
  const auto start = Clock::now();
  p.model.emplace(desk_model_config(), seed);
  CheckpointMeta meta;
  meta.lineage.push_back({0, params_hash(p.model->params())});
  const auto stages = default_stage_configs(Scale::kDesk);
  for (int i = 0; i < 3; ++i) {
    StageConfig config = stages[static_cast<size_t>(i)];
    config.seed = mix64(seed, static_cast<uint64_t>(i + 1));
    StageRunOptions run;
    run.parent = meta;
    run.on_step = [&](int step, double loss, double) {
      if (step % 500 == 0 || step + 1 == config.steps) {
        std::cerr << "  stage " << i + 1 << " step " << step << " loss " << loss << '\n';
      }
    };
    p.records.push_back(run_stage(config, *p.model, {}, run));
    meta.stage = i + 1;
    meta.lineage = p.records.back().lineage;
    if (p.records.back().aborted) break;
  }
  p.seconds = seconds_since(start);
  return p;
}

// 5. Trainability.
Outcome trainability(const Pipeline& p) {
  if (p.records.size() != 3 || p.records.back().aborted) return {false, "pipeline aborted"};
  const TaskOptions options;
  const uint64_t held_out = 0x5eedULL;
  const auto metrics = evaluate(
      *p.model, {make_dataset(p.model->layout(), {TaskKind::kAsr, held_out, 100}, options),
                 make_dataset(p.model->layout(), {TaskKind::kAudioQaAudioOut, held_out, 100},
                              options)});
  const double asr = metrics.at("asr").exact_match;
  const double qa = metrics.at("audio_qa_audio_out").exact_match;
  const bool frozen = p.records[0].frozen_unchanged && p.records[1].frozen_unchanged;
  std::ostringstream d;
  d << "asr " << asr << ", audio_qa_audio_out " << qa << ", frozen groups "
    << (frozen ? "unchanged" : "CHANGED") << ", " << fmt("%.0f s", p.seconds);
  return {asr >= 0.95 && qa >= 0.95 && frozen && p.seconds < 1800.0, d.str()};
}

EffectiveInputSequence query_prefix(const Model& m, TaskKind task, uint64_t seed) {
  TaskSample s = gen_task_sample(m.layout(), TaskKind::kAudioQaAudioOut, seed, 0);
  s.input.task = task;
  return prefix_input(m, sample_plan(m.layout(), s.input), std::nullopt,
                      audio_features(m.config(), s.input));
}

// 6. Batch-parallel decode.
Outcome batch_parallel(const Model& m) {
  int mismatches = 0;
  int sessions = 0;
  for (uint64_t s = 0; s < 20; ++s) {
    const auto a = query_prefix(m, TaskKind::kAudioQaAudioOut, 100 + s);
    const auto b = query_prefix(m, TaskKind::kAudioQaTextOut, 100 + s);
    const GenerationLimits limits{.max_steps = 40};
    const BatchParallelResult r = batch_parallel_generate(m, a, b, limits, {}, s);
    const GenerationResult solo = generate(m, b, {.max_steps = 40, .audio_output = false}, s);
    ++sessions;
    if (r.b.columns != solo.columns) ++mismatches;
    for (size_t t = 0; t < r.a.columns.size(); ++t) {
      const TokenId want = t < solo.columns.size() ? solo.columns[t][0] : pad_id(m.layout(), 0);
      if (r.a.columns[t][0] != want) {
        ++mismatches;
        break;
      }
    }
  }
  // Intervention: B's text token at step t is replaced.
  const int t = 1;
  const auto a = query_prefix(m, TaskKind::kAudioQaAudioOut, 7);
  const auto b = query_prefix(m, TaskKind::kAudioQaTextOut, 7);
  BatchParallelOptions plain;
  plain.record_logits = true;
  BatchParallelOptions swapped = plain;
  swapped.text_override = [&](int step, TokenId proposed) {
    return step == t ? (proposed == 9 ? 10 : 9) : proposed;
  };
  const auto x = batch_parallel_generate(m, a, b, {.max_steps = 12}, plain, 0);
  const auto y = batch_parallel_generate(m, a, b, {.max_steps = 12}, swapped, 0);
  bool intervened = x.a_logits.size() > static_cast<size_t>(t + 1) &&
                    y.a_logits.size() > static_cast<size_t>(t + 1);
  if (intervened) {
    for (int s = 0; s <= t; ++s) {
      for (size_t r = 1; r < x.a_logits[s].size(); ++r) {
        if (x.a_logits[s][r] != y.a_logits[s][r]) intervened = false;
      }
    }
    bool changed = false;
    for (size_t r = 1; r < x.a_logits[t + 1].size(); ++r) {
      if (x.a_logits[t + 1][r] != y.a_logits[t + 1][r]) changed = true;
    }
    intervened = intervened && changed;
  }
  std::ostringstream d;
  d << sessions << " sessions, " << mismatches << " text mismatches, intervention "
    << (intervened ? "changes" : "does NOT change") << " audio logits at t+1";
  return {mismatches == 0 && intervened, d.str()};
}

// 7. Duplex safety and latency.
Outcome duplex(const Model& m) {
  const VocabLayout& v = m.layout();
  const TaskOptions options;
  const auto phrase = stop_phrase_generator(v, options.phrase_substitution);
  const auto noise = background_noise_generator(v);
  const auto held_out = build_interrupt_dataset(0xd0d0ULL, 500, options.frame_rate, phrase,
                                                noise, options.interrupt);
  // Safety streams put the stop phrase inside the response.
  InterruptDatasetOptions early = options.interrupt;
  early.noise_max_frames = early.noise_min_frames + 4;
  const auto safety =
      build_interrupt_dataset(0xd3d3ULL, 500, options.frame_rate, phrase, noise, early);
  const auto noise_streams = build_noise_streams(0xd1d1ULL, 100, 40, noise, options.frame_rate);

  // Safety: no column after the first committed IRQ.
  int violations = 0;
  int halted = 0;
  for (size_t i = 0; i < safety.size(); ++i) {
    DuplexEngine engine(std::make_unique<ModelDetector>(m));
    std::vector<StreamFrame> frames = safety[i].frames;
    const auto prefix = query_prefix(m, TaskKind::kAudioQaAudioOut, 300 + i);
    const DuplexTranscript t = run_duplex_session(
        engine, frames_source(std::move(frames)),
        std::make_unique<GenerationSession>(m, prefix, GenerationLimits{.max_steps = 64}, i));
    int first_irq = -1;
    for (size_t s = 0; s < t.status_log.size(); ++s) {
      if (t.status_log[s] == Status::kIrq) {
        first_irq = static_cast<int>(s);
        break;
      }
    }
    if (first_irq >= 0) {
      ++halted;
      if (static_cast<int>(t.columns.size()) > first_irq || t.stop_step != first_irq) {
        ++violations;
      }
      if (engine.next_column()) ++violations;
    }
  }

  ModelDetector learned(m);
  const DuplexMetrics dm = evaluate_duplex(learned, held_out, noise_streams);
  MotifDetector stub(stop_motif(v));
  const auto exact = build_interrupt_dataset(0xd2d2ULL, 200, options.frame_rate,
                                             stop_phrase_generator(v, 0.0), noise,
                                             options.interrupt);
  const DuplexMetrics sm = evaluate_duplex(stub, exact, noise_streams);

  const bool pass = violations == 0 && dm.frame_accuracy > 0.95 &&
                    dm.false_trigger_rate < 0.01 && dm.mean_latency <= 3.0 &&
                    sm.mean_latency == 0.0 && sm.false_trigger_rate == 0.0 &&
                    sm.early_triggers == 0 && sm.misses == 0;
  std::ostringstream d;
  d << "500 sessions (" << halted << " halted), " << violations << " late columns; frame acc "
    << dm.frame_accuracy << ", false triggers " << dm.false_trigger_rate << ", latency "
    << dm.mean_latency << "; stub latency " << sm.mean_latency << ", stub false triggers "
    << sm.false_trigger_rate;
  return {pass, d.str()};
}

// 8. Assembly length law.
Outcome assembly_length() {
  const VocabLayout v = desk_layout();
  Rng rng(8);
  std::vector<MatF> tables;
  for (int r = 0; r < v.row_count(); ++r) tables.push_back(MatF::Ones(v.region_width(r), 4));
  auto features = [&](Modality m, int n) {
    FeatureSequence f{m, MatF(n, 4)};
    for (Eigen::Index i = 0; i < f.vectors.size(); ++i) {
      f.vectors.data()[i] = static_cast<float>(rng.normal());
    }
    return f;
  };
  int failures = 0;
  int both = 0;
  for (int i = 0; i < 200; ++i) {
    AssemblyInput in;
    int blocks = 0;
    const int mix = static_cast<int>(rng.range(1, 7));
    const bool vision = mix & 1;
    const bool audio = mix & 2;
    const bool text = mix & 4;
    int la = 0;
    if (vision) {
      in.vision = features(Modality::kVision, 50);
      blocks += 50;
    }
    if (audio) {
      la = static_cast<int>(rng.range(1, 40));
      in.audio = features(Modality::kAudio, la);
      blocks += la;
    }
    if (text) {
      std::vector<TokenId> ids(static_cast<size_t>(rng.range(1, 12)));
      for (auto& id : ids) id = static_cast<TokenId>(rng.below(48));
      blocks += static_cast<int>(ids.size());
      in.text = ids;
    }
    if (vision + audio + text > 1) {
      in.task = vision ? TaskKind::kVisualQaTextOut : TaskKind::kAudioQaTextOut;
    }
    const int got = assemble(v, tables, in).length();
    if (got != blocks + 1) ++failures;
    if (vision && audio && !text) {
      ++both;
      if (got != 50 + la + 1) ++failures;
    }
  }
  std::ostringstream d;
  d << "200 mixes (" << both << " vision+audio), " << failures << " failures";
  return {failures == 0, d.str()};
}

int run_cli(const std::string& args, const fs::path& dir) {
  const std::string cmd = "cd '" + dir.string() + "' && '" + OMNI_CLI_PATH + "' " + args +
                          " > /dev/null 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

// 9. Reproducibility.
Outcome reproducibility() {
  const fs::path dir = fs::temp_directory_path() / "omni_acceptance_repro";
  fs::remove_all(dir);
  fs::create_directories(dir);
  bool ok = true;
  std::string why;
  for (const char* task : {"asr", "visual_qa_audio_out", "interrupt"}) {
    const std::string base = std::string("data-gen --task ") + task + " --size 50 --seed 11";
    if (run_cli(base + " --out a.jsonl", dir) != 0 || run_cli(base + " --out b.jsonl", dir) != 0) {
      return {false, "data-gen failed"};
    }
    const std::string a = slurp(dir / "a.jsonl");
    if (a.empty() || a != slurp(dir / "b.jsonl")) {
      ok = false;
      why += std::string(" ") + task + " datasets differ;";
    }
  }
  const std::string train = "train --stage 1 --steps 25 --batch 8 --seed 4 --log-every 0";
  if (run_cli(train + " --out r1.ck", dir) != 0 || run_cli(train + " --out r2.ck", dir) != 0) {
    return {false, "train failed"};
  }
  const auto l1 = nlohmann::json::parse(slurp(dir / "r1.ck.run.json")).at("losses");
  const auto l2 = nlohmann::json::parse(slurp(dir / "r2.ck.run.json")).at("losses");
  if (l1 != l2 || l1.size() != 25) {
    ok = false;
    why += " loss curves differ;";
  }
  if (slurp(dir / "r1.ck") != slurp(dir / "r2.ck")) {
    ok = false;
    why += " checkpoints differ;";
  }
  fs::remove_all(dir);
  return {ok, ok ? "3 datasets and a 25-step loss curve identical across runs" : why};
}

}  // namespace
}  // namespace omni

// Optional arguments pick criteria by number; the default runs all nine.
int main(int argc, char** argv) {
  using namespace omni;
  std::vector<bool> wanted(10, argc == 1);
  for (int i = 1; i < argc; ++i) {
    const int n = std::atoi(argv[i]);
    if (n < 1 || n > 9) {
      std::cerr << "usage: omni_acceptance [criterion...]\n";
      return 2;
    }
    wanted[static_cast<size_t>(n)] = true;
  }
  int failed = 0;
  auto report = [&](int n, const char* name, const std::function<Outcome()>& check) {
    if (!wanted[static_cast<size_t>(n)]) return;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    std::cout << (o.pass ? "[PASS] " : "[FAIL] ") << n << ". " << name << ": " << o.detail
              << std::endl;
    if (!o.pass) ++failed;
  };
  report(1, "vocabulary bijection", vocab_bijection);
  report(2, "delay round trip", delay_round_trip);
  report(3, "loss oracle", loss_oracle);
  report(4, "gradient check", gradient_check);
  Pipeline pipeline;
  if (wanted[5] || wanted[6] || wanted[7]) {
    std::cerr << "training the desk-scale pipeline\n";
    pipeline = run_pipeline(0);
  }
  report(5, "trainability", [&] { return trainability(pipeline); });
  report(6, "batch-parallel decode", [&] { return batch_parallel(*pipeline.model); });
  report(7, "duplex safety and latency", [&] { return duplex(*pipeline.model); });
  report(8, "assembly length law", assembly_length);
  report(9, "reproducibility", reproducibility);
  std::cout << (failed == 0 ? "all selected criteria passed" : std::to_string(failed) + " failed")
            << std::endl;
  return failed == 0 ? 0 : 1;
}
