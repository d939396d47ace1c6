#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sgf/spn.hpp"
#include "sgf/tape.hpp"

namespace sgf {

inline constexpr double kPredicateLossWeight = 0.1;

struct LossTerms {
  double total = 0.0;
  double object = 0.0;
  double predicate = 0.0;
};

/// L = L_obj + w * L_pred, each a mean cross-entropy over labeled rows (label -1
/// is skipped). Labels outside the vocabulary raise DataError.
LossTerms loss(const Mat& node_logits, const Mat& edge_logits, std::span<const int> node_labels,
               std::span<const int> edge_labels, double predicate_weight = kPredicateLossWeight);

/// Records the complete network on `tape`. `bindings[i]` is the Var bound to
/// params.tensors()[i].
struct TapeForward {
  std::vector<ad::Var> bindings;
  std::vector<ad::Var> node_features;  // layer 0..L
  std::vector<ad::Var> edge_features;
  ad::Var node_logits;
  ad::Var edge_logits;
};
TapeForward forward_on_tape(ad::Tape& tape, const GraphInput& input, const SpnParameters& params);

struct GradientResult {
  LossTerms loss;
  SpnParameters gradients;
};

/// Analytic gradients of the joint loss with respect to every parameter tensor.
GradientResult compute_gradients(const GraphInput& input, std::span<const int> node_labels,
                                 std::span<const int> edge_labels, const SpnParameters& params,
                                 double predicate_weight = kPredicateLossWeight,
                                 ad::Reduction reduction = ad::Reduction::Mean);

// ---- optimizer ----------------------------------------------------------------

struct OptimizerConfig {
  double lr_base = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

/// Decoupled weight decay with the non-decreasing second-moment variant.
struct OptimizerState {
  SpnParameters first_moment;
  SpnParameters second_moment;
  SpnParameters max_second_moment;
  std::int64_t step = 0;

  static OptimizerState zeros(const ModelConfig& config);
};

/// lr_base / ln(n) with n clamped to at least e, so the rate never exceeds lr_base.
double edge_scaled_learning_rate(double lr_base, std::size_t n_edges);

void optimizer_step(SpnParameters& params, const SpnParameters& grads, OptimizerState& state,
                    const OptimizerConfig& config, std::size_t n_edges);

void save_optimizer_state(const std::string& prefix, const OptimizerState& state);
OptimizerState load_optimizer_state(const std::string& prefix, const ModelConfig& config);

// ---- training data ------------------------------------------------------------

struct TrainingSegment {
  SegmentId id = 0;
  std::vector<Point> points;
  int label = -1;  // -1: unmatched, excluded from the loss
};

/// One fully reconstructed scene: segments, undirected proximity edges and a
/// predicate label per directed edge.
struct TrainingScene {
  std::vector<TrainingSegment> segments;
  std::vector<IdPair> edges;            // undirected, first < second
  std::map<IdPair, int> edge_labels;    // directed
};

struct SamplerConfig {
  int seeds = 2;
  int hops = 4;
  double edge_dropout = 0.5;
  std::size_t points_per_segment = 128;
  int input_channels = 3;
};

struct TrainingBatch {
  std::vector<SegmentId> node_ids;
  std::vector<IdPair> edges;  // directed, both directions of every kept edge
  GraphInput input;
  std::vector<int> node_labels;
  std::vector<int> edge_labels;
};

/// Nodes within `hops` edges of any of `seeds` in the scene's proximity graph.
std::set<SegmentId> select_training_nodes(const TrainingScene& scene, std::span<const SegmentId> seeds, int hops);

/// Union of `hops`-hop balls around `seeds` uniformly drawn nodes; each undirected
/// edge survives with probability 1 - dropout (both directions together); points
/// are resampled and properties recomputed on the sample.
TrainingBatch sample_training_subgraph(const TrainingScene& scene, std::mt19937_64& rng, const SamplerConfig& config);

/// Deterministic whole-scene batch with every point set capped by reservoir sampling.
TrainingBatch full_scene_batch(const TrainingScene& scene, const SamplerConfig& config, std::uint64_t sample_seed);

// ---- trainer ------------------------------------------------------------------

struct TrainConfig {
  ModelConfig model;
  OptimizerConfig optimizer;
  SamplerConfig sampler;
  int epochs = 30;
  std::uint64_t seed = 7;
  double predicate_weight = kPredicateLossWeight;
};

struct EpochRecord {
  int epoch = 0;
  double loss = 0.0;
  double object_loss = 0.0;
  double predicate_loss = 0.0;
};

class Trainer {
 public:
  explicit Trainer(TrainConfig config);
  Trainer(TrainConfig config, SpnParameters params, OptimizerState state);

  /// One pass over `scenes` in shuffled order, one sampled subgraph per scene.
  EpochRecord run_epoch(std::span<const TrainingScene> scenes);
  std::vector<EpochRecord> fit(std::span<const TrainingScene> scenes,
                               const std::function<void(const EpochRecord&)>& on_epoch = {});

  [[nodiscard]] const SpnParameters& parameters() const { return params_; }
  [[nodiscard]] const OptimizerState& optimizer_state() const { return state_; }
  [[nodiscard]] const TrainConfig& config() const { return config_; }

 private:
  TrainConfig config_;
  SpnParameters params_;
  OptimizerState state_;
  std::mt19937_64 rng_;
  int epoch_ = 0;
};

void write_loss_curve_csv(const std::string& path, std::span<const EpochRecord> records);

}  // namespace sgf
