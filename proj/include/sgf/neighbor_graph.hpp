#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <span>
#include <vector>

#include "sgf/scene_map.hpp"

namespace sgf {

struct GraphConfig {
  double proximity_threshold = 0.5;  // meters
  double resize_ratio = 0.10;
  FrameIndex stale_frames = 60;
  std::size_t min_segment_points = 512;
  /// Frames between all-pairs edge re-evaluations; 0 disables the sweep.
  FrameIndex full_sweep_interval = 60;
  std::size_t points_per_segment = 128;
  std::uint64_t sample_seed = 0x5eed;
};

using Adjacency = std::map<SegmentId, std::set<SegmentId>>;

/// Gap between two axis-aligned boxes given by (min, max) corners: per-axis
/// max(0, |dc| - (ea + eb)/2), combined with the Euclidean norm.
double bbox_distance(const Vec3& min_a, const Vec3& max_a, const Vec3& min_b, const Vec3& max_b);

/// Deterministic reservoir sample of at most `count` points; the RNG is seeded from
/// (seed, segment id, segment size) so the same segment state always yields the same sample.
std::vector<Point> sample_points(std::span<const Point> points, std::size_t count, std::uint64_t seed,
                                 SegmentId id);

/// Frozen per-segment input for the network: properties and a point sample.
struct NodeSnapshot {
  SegmentId id = 0;
  std::size_t point_count = 0;
  ShapeProperties properties;
  std::vector<Point> points;
};

/// Immutable input for one prediction pass: flagged nodes, their direct neighbors
/// and every undirected edge among the included nodes.
struct SubgraphSnapshot {
  FrameIndex frame = 0;
  std::vector<NodeSnapshot> nodes;      // sorted by id
  std::vector<IdPair> edges;            // undirected, first < second, sorted
  std::vector<SegmentId> flagged;       // sorted
  [[nodiscard]] bool empty() const { return nodes.empty(); }
};

struct EdgeDelta {
  std::vector<IdPair> added;    // undirected
  std::vector<IdPair> removed;  // undirected
  [[nodiscard]] bool empty() const { return added.empty() && removed.empty(); }
};

/// Proximity graph over segments that have reached the minimum point count.
class NeighborGraph {
 public:
  explicit NeighborGraph(GraphConfig config = {}) : config_(config) {}

  /// Brings the graph in line with one applied frame: drops removed segments,
  /// admits segments that became eligible, re-evaluates edges of touched segments,
  /// and runs the periodic all-pairs sweep.
  EdgeDelta update(const SceneMap& map, const FrameDelta& delta);

  /// Re-evaluates every edge incident to `touched` against `threshold`. Idempotent.
  EdgeDelta maintain_edges(const SceneMap& map, std::span<const SegmentId> touched, double threshold);
  EdgeDelta full_sweep(const SceneMap& map);

  /// Segments never predicted, grown by more than the resize ratio, or stale.
  [[nodiscard]] std::vector<SegmentId> flag_for_prediction(const SceneMap& map, FrameIndex frame) const;

  /// Flagged nodes get a fresh point sample; unflagged neighbors reuse the sample
  /// frozen at their last prediction.
  [[nodiscard]] SubgraphSnapshot extract_subgraph(const SceneMap& map, std::span<const SegmentId> flagged,
                                                  FrameIndex frame) const;

  /// Records that `snapshot` was handed to the predictor: freezes the flagged
  /// nodes' samples and stamps their prediction bookkeeping in the map.
  void commit(const SubgraphSnapshot& snapshot, SceneMap& map);

  void add_node(SegmentId id);
  void remove_node(SegmentId id);
  void add_edge(SegmentId a, SegmentId b);
  void remove_edge(SegmentId a, SegmentId b);

  [[nodiscard]] bool contains(SegmentId id) const { return adjacency_.contains(id); }
  [[nodiscard]] bool has_edge(SegmentId a, SegmentId b) const;
  [[nodiscard]] const Adjacency& adjacency() const { return adjacency_; }
  [[nodiscard]] std::size_t edge_count() const;  // undirected
  [[nodiscard]] std::vector<IdPair> directed_edges() const;
  [[nodiscard]] const GraphConfig& config() const { return config_; }

 private:
  NodeSnapshot freeze(const Segment& seg) const;

  GraphConfig config_;
  Adjacency adjacency_;
  std::map<SegmentId, NodeSnapshot> frozen_;
  FrameIndex last_sweep_ = 0;
};

/// Nodes within `hops` edges of any seed, seeds included.
std::set<SegmentId> neighborhood(const Adjacency& adjacency, const std::set<SegmentId>& seeds, int hops);

/// Per layer, the node and directed-edge features that must be recomputed after
/// `changed` nodes were modified. Index 0 is the input embedding layer; index L the
/// final GNN layer (whose node/edge sets also drive the classifiers).
struct RecomputePlan {
  std::vector<std::set<SegmentId>> nodes;
  std::vector<std::set<IdPair>> edges;

  [[nodiscard]] bool empty() const;
  [[nodiscard]] int layers() const { return static_cast<int>(nodes.size()) - 1; }
};

RecomputePlan mark_dirty_and_plan(const Adjacency& adjacency, const std::set<SegmentId>& changed, int layers);

/// Layered feature store for nodes and directed edges with per-layer dirty bits.
/// Reading a dirty entry is a logic error.
class FeatureCache {
 public:
  explicit FeatureCache(int layers = 2) : layers_(layers) {}

  void mark_dirty(const RecomputePlan& plan);
  void erase_node(SegmentId id);
  void erase_edge(const IdPair& edge);

  void set_node(SegmentId id, int layer, Mat value);
  void set_edge(const IdPair& edge, int layer, Mat value);
  void set_node_logits(SegmentId id, Mat value);
  void set_edge_logits(const IdPair& edge, Mat value);

  [[nodiscard]] const Mat& node(SegmentId id, int layer) const;
  [[nodiscard]] const Mat& edge(const IdPair& edge, int layer) const;
  [[nodiscard]] const Mat& node_logits(SegmentId id) const;
  [[nodiscard]] const Mat& edge_logits(const IdPair& edge) const;

  [[nodiscard]] bool node_dirty(SegmentId id, int layer) const;
  [[nodiscard]] bool edge_dirty(const IdPair& edge, int layer) const;
  [[nodiscard]] int layers() const { return layers_; }
  [[nodiscard]] std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Entry {
    std::vector<Mat> features;     // layer 0..L
    std::vector<bool> dirty;       // layer 0..L, plus one slot for the logits
    Mat logits;
  };
  Entry& node_entry(SegmentId id);
  Entry& edge_entry(const IdPair& e);

  int layers_;
  std::map<SegmentId, Entry> nodes_;
  std::map<IdPair, Entry> edges_;
};

}  // namespace sgf
