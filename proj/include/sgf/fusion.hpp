#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sgf/spn.hpp"

namespace sgf {

inline constexpr double kMaxFusionWeight = 100.0;
inline constexpr double kNormalizationTolerance = 1e-6;

struct FusedDistribution {
  Eigen::VectorXd probabilities;
  double weight = 0.0;

  [[nodiscard]] int argmax() const;
};

/// Running average mu = (mu_in * w_in + mu * w) / (w_in + w), w = min(w_max, w_in + w).
/// Both inputs must sum to 1 within kNormalizationTolerance.
FusedDistribution fuse(const FusedDistribution& stored, const Eigen::VectorXd& incoming, double incoming_weight = 1.0,
                       double max_weight = kMaxFusionWeight);

struct FusedNode {
  FusedDistribution classes;
  std::size_t size = 0;
  ShapeProperties properties;
};

struct Instance {
  SegmentId id = 0;  // smallest member id
  std::vector<SegmentId> members;
  int label = 0;
};

class FusedSceneGraph {
 public:
  explicit FusedSceneGraph(int same_part_predicate = 1, double max_weight = kMaxFusionWeight);

  void apply_prediction(const Prediction& prediction);
  /// Drops the node, its edges, and any later prediction that mentions it.
  void remove_segment(SegmentId id);

  /// Connected components of edges whose predicate argmax is `same part` in both directions.
  [[nodiscard]] std::vector<Instance> cluster_instances() const;
  [[nodiscard]] std::map<SegmentId, SegmentId> instance_of() const;

  [[nodiscard]] const std::map<SegmentId, FusedNode>& nodes() const { return nodes_; }
  [[nodiscard]] const std::map<IdPair, FusedDistribution>& edges() const { return edges_; }
  [[nodiscard]] std::uint64_t skipped() const { return skipped_; }
  [[nodiscard]] std::uint64_t applied() const { return applied_; }
  [[nodiscard]] int same_part_predicate() const { return same_part_; }

  void set_node(SegmentId id, FusedNode node) { nodes_[id] = std::move(node); }
  void set_edge(IdPair edge, FusedDistribution d) { edges_[edge] = std::move(d); }

 private:
  int same_part_;
  double max_weight_;
  std::map<SegmentId, FusedNode> nodes_;
  std::map<IdPair, FusedDistribution> edges_;
  std::set<SegmentId> retired_;
  std::uint64_t skipped_ = 0;
  std::uint64_t applied_ = 0;
};

inline constexpr int kGraphSchemaVersion = 1;

/// JSON document with schema_version, nodes, edges and instances. Floats use 17
/// significant digits.
std::string export_graph(const FusedSceneGraph& graph, const std::vector<std::string>& class_names = {},
                         const std::vector<std::string>& predicate_names = {});
void export_graph_file(const std::string& path, const FusedSceneGraph& graph,
                       const std::vector<std::string>& class_names = {},
                       const std::vector<std::string>& predicate_names = {});
/// Inverse of export_graph for the stored distributions, weights, sizes and properties.
FusedSceneGraph parse_graph(const std::string& text);

}  // namespace sgf
