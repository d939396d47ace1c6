#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgf/datagen.hpp"
#include "sgf/fusion.hpp"
#include "sgf/incremental.hpp"
#include "sgf/metrics.hpp"
#include "sgf/neighbor_graph.hpp"
#include "sgf/scene_map.hpp"
#include "sgf/spn.hpp"

namespace sgf {

enum class WorkerMode { Sync, Async };

struct PipelineConfig {
  GraphConfig graph;
  WorkerMode mode = WorkerMode::Sync;
  std::size_t queue_capacity = 4;
  double max_fusion_weight = kMaxFusionWeight;
  std::uint64_t seed = 7;
  std::string export_path;
  std::string report_path;

  /// Graph settings for the synthetic desk-scale data (64-point minimum segments).
  static PipelineConfig desk();
  void validate() const;
};

/// Reads any subset of PipelineConfig keys; unknown keys are a ConfigError.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j, PipelineConfig base = PipelineConfig::desk());
nlohmann::json to_json(const PipelineConfig& c);
/// Loads the file named by the SGF_CONFIG environment variable on top of `base`.
PipelineConfig pipeline_config_from_env(PipelineConfig base = PipelineConfig::desk());

struct StageStats {
  std::vector<double> samples;  // milliseconds
  [[nodiscard]] double mean() const;
  [[nodiscard]] double p95() const;
};

struct LatencyReport {
  std::map<std::string, StageStats> stages;
  std::size_t frames = 0;
  std::size_t predictions = 0;
  std::size_t coalesced_frames = 0;  // frames whose flags waited for queue space
  /// Sums over all predictions of rows computed, per layer, and of plan sizes.
  std::vector<std::size_t> node_computations, edge_computations;
  std::vector<std::size_t> node_plan, edge_plan;

  void add(const std::string& stage, double ms) { stages[stage].samples.push_back(ms); }
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string table() const;
};

struct PipelineResult {
  FusedSceneGraph graph;
  LatencyReport report;
  SceneMap map;
};

/// Per frame: apply_frame, neighbor-graph update, flagging, subgraph extraction, cached
/// prediction and fusion. Ends with a drain barrier so every flagged segment is
/// predicted at least once.
PipelineResult run_pipeline(std::span<const FrameUpdate> frames, const SpnParameters& params,
                            const PipelineConfig& config);

// ---- evaluation -----------------------------------------------------------------

struct LabeledScene {
  std::vector<FrameUpdate> frames;
  GroundTruth truth;
};

/// Scene i is generated from an RNG seeded with (seed, i).
std::vector<LabeledScene> generate_dataset(int count, std::uint64_t seed, const RoomOptions& options = {},
                                           const Vocabulary& vocab = Vocabulary::desk());
/// Writes scene_NNN.jsonl and scene_NNN.gt.json for every scene, numbered from `first`.
void write_dataset(const std::string& dir, std::span<const LabeledScene> scenes, int first = 0);
/// Reads every scene_*.jsonl with its ground-truth sidecar, in name order.
std::vector<LabeledScene> read_dataset(const std::string& dir);

/// Final-state training scenes labeled against their ground truth.
std::vector<TrainingScene> training_scenes(std::span<const LabeledScene> scenes, const Vocabulary& vocab,
                                           const GraphConfig& graph);

struct SceneOutcome {
  PipelineResult pipeline;
  ReconstructedScene reconstruction;
};

/// Runs the synchronous pipeline on every scene and scores the fused graphs.
EvalReport evaluate(std::span<const LabeledScene> scenes, const SpnParameters& params, const PipelineConfig& config,
                    const Vocabulary& vocab, std::vector<SceneOutcome>* outcomes = nullptr);

}  // namespace sgf
