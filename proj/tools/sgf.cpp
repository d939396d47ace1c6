#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>

#include <CLI11.hpp>

#include "sgf/checkpoint.hpp"
#include "sgf/engine.hpp"
#include "sgf/stream_io.hpp"
#include "sgf/train.hpp"

namespace {

using namespace sgf;

enum ExitCode { kOk = 0, kUsage = 1, kData = 2, kNumeric = 3 };

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << text;
}

ModelConfig profile_config(const std::string& profile) {
  if (profile == "desk") return ModelConfig::desk();
  if (profile == "full") return ModelConfig::full();
  throw ConfigError("unknown profile '" + profile + "' (desk or full)");
}

SpnParameters model_for(const std::string& checkpoint, const std::string& profile, std::uint64_t seed) {
  if (!checkpoint.empty()) return load_checkpoint(checkpoint);
  return SpnParameters::initialize(profile_config(profile), seed);
}

struct Common {
  std::string checkpoint;
  std::string profile = "desk";
  std::string config_file;
  bool async = false;
  std::size_t queue = 0;
  std::optional<std::uint64_t> seed;
};

PipelineConfig pipeline_config(const Common& c) {
  PipelineConfig cfg = pipeline_config_from_env();
  if (!c.config_file.empty()) {
    std::ifstream in(c.config_file);
    if (!in) throw ConfigError("cannot open config " + c.config_file);
    nlohmann::json j;
    try {
      in >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed config: ") + e.what());
    }
    cfg = pipeline_config_from_json(j, cfg);
  }
  if (c.async) cfg.mode = WorkerMode::Async;
  if (c.queue > 0) cfg.queue_capacity = c.queue;
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  return cfg;
}

void add_common(CLI::App* cmd, Common& c, bool model) {
  if (model) {
    cmd->add_option("--checkpoint", c.checkpoint, "Checkpoint prefix (<prefix>.json/.bin)");
    cmd->add_option("--profile", c.profile, "Model dimensions without a checkpoint: desk or full");
  }
  cmd->add_option("--config", c.config_file, "Pipeline config JSON (overrides $SGF_CONFIG)");
  cmd->add_flag("--async", c.async, "Two-worker mode");
  cmd->add_flag("--sync", [&c](std::int64_t) { c.async = false; }, "Single-thread deterministic mode (default)");
  cmd->add_option("--queue", c.queue, "Prediction queue capacity");
  cmd->add_option("--seed", c.seed, "Seed");
}

int run(int argc, char** argv) {
  CLI::App app{"Incremental semantic scene graphs from segmented point-cloud streams"};
  app.require_subcommand(1);

  // gen
  auto* gen = app.add_subcommand("gen", "Generate synthetic scenes with ground truth");
  int scenes = 20;
  std::uint64_t gen_seed = 7;
  std::string gen_out;
  int first = 0;
  int dense = 0;
  RoomOptions room;
  gen->add_option("--scenes", scenes, "Number of scenes")->check(CLI::PositiveNumber);
  gen->add_option("--seed", gen_seed, "Seed");
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--first", first, "Index of the first scene file");
  gen->add_option("--frames", room.frames, "Frames per stream")->check(CLI::PositiveNumber);
  gen->add_option("--point-scale", room.point_scale, "Point count multiplier");
  gen->add_option("--dense", dense, "Emit one dense grid scene with about this many segments");

  // train
  auto* train = app.add_subcommand("train", "Train a model on generated scenes");
  std::string train_data, train_out, train_profile = "desk";
  TrainConfig tc;
  train->add_option("--data", train_data, "Scene directory")->required();
  train->add_option("--out", train_out, "Checkpoint prefix")->required();
  train->add_option("--epochs", tc.epochs, "Epochs")->check(CLI::PositiveNumber);
  train->add_option("--seed", tc.seed, "Seed");
  train->add_option("--profile", train_profile, "desk or full");
  train->add_option("--lr", tc.optimizer.lr_base, "Base learning rate");

  // run
  auto* runc = app.add_subcommand("run", "Run the incremental pipeline on one stream");
  Common run_c;
  std::string stream, run_out, run_report;
  runc->add_option("--stream", stream, "Stream file (JSON lines)")->required();
  runc->add_option("--out", run_out, "Exported scene graph (stdout if omitted)");
  runc->add_option("--report", run_report, "Latency report JSON");
  add_common(runc, run_c, true);

  // eval
  auto* evalc = app.add_subcommand("eval", "Score the pipeline against ground truth");
  Common eval_c;
  std::string eval_data, eval_out, eval_csv;
  evalc->add_option("--data", eval_data, "Scene directory")->required();
  evalc->add_option("--out", eval_out, "Metrics JSON (stdout if omitted)");
  evalc->add_option("--csv", eval_csv, "Per-class CSV");
  add_common(evalc, eval_c, true);

  // bench
  auto* bench = app.add_subcommand("bench", "Replay a stream and report latency and recomputation");
  Common bench_c;
  std::string bench_stream, bench_report;
  int repeat = 3;
  bench->add_option("--stream", bench_stream, "Stream file (JSON lines)")->required();
  bench->add_option("--repeat", repeat, "Replays")->check(CLI::PositiveNumber);
  bench->add_option("--report", bench_report, "Latency report JSON");
  add_common(bench, bench_c, true);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  const Vocabulary vocab = Vocabulary::desk();
  if (gen->parsed()) {
    if (dense > 0) {
      std::mt19937_64 rng(gen_seed);
      GeneratedScene g = generate_scene(dense_scene(dense, rng, room.frames), rng, vocab);
      const LabeledScene s{std::move(g.frames), std::move(g.truth)};
      write_dataset(gen_out, std::span(&s, 1), first);
    } else {
      write_dataset(gen_out, generate_dataset(scenes, gen_seed, room, vocab), first);
    }
    std::printf("wrote %d scene(s) to %s\n", dense > 0 ? 1 : scenes, gen_out.c_str());
  } else if (train->parsed()) {
    tc.model = profile_config(train_profile);
    const auto data = read_dataset(train_data);
    if (data.empty()) throw DataError("no scenes in " + train_data);
    const auto scenes_t = training_scenes(data, vocab, pipeline_config_from_env().graph);
    Trainer trainer(tc);
    const auto curve = trainer.fit(scenes_t, [](const EpochRecord& r) {
      std::printf("epoch %3d  loss %.6f  object %.6f  predicate %.6f\n", r.epoch, r.loss, r.object_loss,
                  r.predicate_loss);
      std::fflush(stdout);
    });
    save_checkpoint(train_out, trainer.parameters());
    save_optimizer_state(train_out + ".opt", trainer.optimizer_state());
    write_loss_curve_csv(train_out + ".loss.csv", curve);
    std::printf("checkpoint %s.json\n", train_out.c_str());
  } else if (runc->parsed()) {
    const PipelineConfig cfg = pipeline_config(run_c);
    const auto frames = read_stream_file(stream);
    const auto params = model_for(run_c.checkpoint, run_c.profile, cfg.seed);
    const auto result = run_pipeline(frames, params, cfg);
    const std::string doc = export_graph(result.graph, vocab.classes, vocab.predicates);
    const std::string out = run_out.empty() ? cfg.export_path : run_out;
    if (out.empty()) std::cout << doc;
    else write_text(out, doc);
    const std::string rep = run_report.empty() ? cfg.report_path : run_report;
    if (!rep.empty()) write_text(rep, result.report.to_json().dump(2) + "\n");
  } else if (evalc->parsed()) {
    const PipelineConfig cfg = pipeline_config(eval_c);
    const auto data = read_dataset(eval_data);
    const auto params = model_for(eval_c.checkpoint, eval_c.profile, cfg.seed);
    const EvalReport report = evaluate(data, params, cfg, vocab);
    const std::string doc = to_json(report).dump(2) + "\n";
    if (eval_out.empty()) std::cout << doc;
    else write_text(eval_out, doc);
    if (!eval_csv.empty()) write_text(eval_csv, per_class_csv(report));
  } else if (bench->parsed()) {
    const PipelineConfig cfg = pipeline_config(bench_c);
    const auto frames = read_stream_file(bench_stream);
    const auto params = model_for(bench_c.checkpoint, bench_c.profile, cfg.seed);
    LatencyReport total;
    for (int i = 0; i < repeat; ++i) {
      auto r = run_pipeline(frames, params, cfg).report;
      for (auto& [name, s] : r.stages)
        total.stages[name].samples.insert(total.stages[name].samples.end(), s.samples.begin(), s.samples.end());
      total.frames += r.frames;
      total.predictions += r.predictions;
      total.coalesced_frames += r.coalesced_frames;
      if (total.node_computations.empty()) {
        total.node_computations.assign(r.node_computations.size(), 0);
        total.edge_computations.assign(r.edge_computations.size(), 0);
        total.node_plan.assign(r.node_plan.size(), 0);
        total.edge_plan.assign(r.edge_plan.size(), 0);
      }
      for (std::size_t l = 0; l < r.node_computations.size(); ++l) {
        total.node_computations[l] += r.node_computations[l];
        total.edge_computations[l] += r.edge_computations[l];
        total.node_plan[l] += r.node_plan[l];
        total.edge_plan[l] += r.edge_plan[l];
      }
    }
    std::cout << total.table();
    if (total.node_computations != total.node_plan || total.edge_computations != total.edge_plan)
      throw std::logic_error("recomputation counts differ from plan sizes");
    if (!bench_report.empty()) write_text(bench_report, total.to_json().dump(2) + "\n");
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const sgf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const sgf::NumericError& e) {
    std::cerr << "numeric error: " << e.what() << '\n';
    return kNumeric;
  } catch (const sgf::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return kData;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kData;
  }
}
