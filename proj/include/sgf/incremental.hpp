#pragma once

#include <map>
#include <set>
#include <span>
#include <vector>

#include "sgf/neighbor_graph.hpp"
#include "sgf/spn.hpp"

namespace sgf {

/// Number of feature rows actually computed by one refresh, per layer.
struct RecomputeCounts {
  std::vector<std::size_t> nodes;  // layer 0..L
  std::vector<std::size_t> edges;  // layer 0..L
  std::size_t messages = 0;
  std::size_t node_classifications = 0;
  std::size_t edge_classifications = 0;
};

/// Wall-clock milliseconds spent per feature stage in one refresh.
struct StageTimes {
  double node_feature = 0.0;
  double edge_feature = 0.0;
  std::vector<double> gnn;  // per message-passing layer
  double classify = 0.0;
};

/// Prediction worker state: a mirror of the neighbor graph with frozen node
/// inputs and the layered feature cache. Only features inside the recomputation
/// plan are evaluated; everything else is read back from the cache.
class IncrementalPredictor {
 public:
  explicit IncrementalPredictor(SpnParameters params);

  /// Syncs the mirror with `snapshot` (and drops `removed`), refreshes the cache
  /// and returns probabilities for every node and directed edge in the snapshot.
  Prediction predict(const SubgraphSnapshot& snapshot, std::span<const SegmentId> removed = {});

  void remove_node(SegmentId id);
  void upsert_node(const NodeSnapshot& node);
  void set_edge(SegmentId a, SegmentId b, bool present);

  /// Plans from the pending changed set, executes the plan and clears the set.
  RecomputePlan refresh();

  /// From-scratch pass over the mirror: nodes in id order, edges in (source,
  /// target) order.
  [[nodiscard]] ForwardResult full_forward() const;

  [[nodiscard]] std::vector<SegmentId> node_ids() const;
  [[nodiscard]] std::vector<IdPair> directed_edges() const;
  [[nodiscard]] const FeatureCache& cache() const { return cache_; }
  [[nodiscard]] const Adjacency& adjacency() const { return adjacency_; }
  [[nodiscard]] const SpnParameters& parameters() const { return params_; }
  [[nodiscard]] const RecomputeCounts& last_counts() const { return counts_; }
  [[nodiscard]] const RecomputePlan& last_plan() const { return plan_; }
  [[nodiscard]] const StageTimes& last_times() const { return times_; }
  [[nodiscard]] bool contains(SegmentId id) const { return nodes_.contains(id); }

 private:
  struct NodeInput {
    NodeSnapshot snapshot;
    Mat points;      // normalized
    Mat descriptor;  // 1 x 8
  };

  void compute_layer0(const RecomputePlan& plan);
  void compute_gnn_layer(const RecomputePlan& plan, int layer);
  void compute_logits(const RecomputePlan& plan);

  SpnParameters params_;
  Adjacency adjacency_;
  std::map<SegmentId, NodeInput> nodes_;
  FeatureCache cache_;
  std::set<SegmentId> pending_;
  RecomputeCounts counts_;
  RecomputePlan plan_;
  StageTimes times_;
};

}  // namespace sgf
