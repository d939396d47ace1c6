#pragma once

#include <cstdint>
#include <map>
#include <random>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgf/neighbor_graph.hpp"
#include "sgf/scene_map.hpp"
#include "sgf/train.hpp"

namespace sgf {

// ---- vocabularies -------------------------------------------------------------

struct Vocabulary {
  std::vector<std::string> classes;
  std::vector<std::string> predicates;  // [0] = none, [1] = same part
  std::set<int> stuff;

  [[nodiscard]] int class_index(const std::string& name) const;      // -1 if absent
  [[nodiscard]] int predicate_index(const std::string& name) const;  // -1 if absent

  /// floor, wall, table, chair, box; none, same part, standing on, attached to.
  static Vocabulary desk();
  /// Desk classes with the eight-entry predicate set.
  static Vocabulary full();
};

inline constexpr int kNonePredicate = 0;
inline constexpr int kSamePartPredicate = 1;

// ---- scene specification --------------------------------------------------------

enum class Shape { Box, Cylinder, HorizontalPlane, VerticalPlane };

struct ObjectSpec {
  std::string label;
  Shape shape = Shape::Box;
  Vec3 center = Vec3::Zero();  // base center for boxes and cylinders, plane center for planes
  Vec3 size = Vec3::Ones();    // box extents; cylinder (2r, 2r, h); plane (w, h, 0) in its own axes
  double yaw = 0.0;            // rotation about z; vertical planes span their local x axis
  int support = -1;            // index of the supporting object
  std::string relation = "standing on";
  int segments = 1;            // over-segmentation factor k
  std::size_t points = 500;
};

struct MergeSpec {
  int object = 0;        // object whose first segment is emitted in two pieces
  FrameIndex frame = 1;  // frame at which the pieces are merged
};

struct SceneSpec {
  std::vector<ObjectSpec> objects;
  int frames = 10;
  double noise = 0.003;
  std::vector<MergeSpec> merges;

  /// Throws ConfigError on unknown labels, bad indices, cycles or empty objects.
  void validate(const Vocabulary& vocab) const;
};

struct RoomOptions {
  int frames = 10;
  int max_tables = 2;
  int max_chairs = 3;
  int max_boxes = 3;
  double merge_probability = 0.5;
  double point_scale = 1.0;
};

/// Random furnished room: floor, one or two walls, tables, chairs and boxes.
SceneSpec random_room(std::mt19937_64& rng, const RoomOptions& options = {});

/// Large floor with a grid of furniture, about `segments` segments of ~100 points each.
SceneSpec dense_scene(int segments, std::mt19937_64& rng, int frames = 10);

// ---- ground truth ---------------------------------------------------------------

struct Relation {
  int subject = 0;  // instance ids
  int object = 0;
  std::string predicate;
};

/// Every emitted surface point with its instance and class, plus instance relations.
struct GroundTruth {
  std::vector<Vec3> points;
  std::vector<int> instance;
  std::vector<int> label;
  std::map<int, int> instance_label;
  std::vector<Relation> relations;
  std::vector<std::string> classes;
  std::set<int> stuff;
};

struct GeneratedScene {
  std::vector<FrameUpdate> frames;
  GroundTruth truth;
};

/// Samples every object surface, splits it into k slabs along its longest horizontal
/// axis, and reveals points over `frames` frames with a sweep along x.
GeneratedScene generate_scene(const SceneSpec& layout, std::mt19937_64& rng, const Vocabulary& vocab = Vocabulary::desk());

nlohmann::json ground_truth_to_json(const GroundTruth& gt);
GroundTruth ground_truth_from_json(const nlohmann::json& j);
void write_ground_truth(const std::string& path, const GroundTruth& gt);
GroundTruth read_ground_truth(const std::string& path);

// ---- label generation -----------------------------------------------------------

inline constexpr double kAssociationRadius = 0.02;
inline constexpr double kMinIntersection = 0.5;
inline constexpr double kMaxForeignCoverage = 0.1;

struct LabelSegment {
  SegmentId id = 0;
  std::vector<Vec3> points;
};

struct SegmentMatch {
  int instance = -1;                    // -1: unmatched
  double intersection = 0.0;            // fraction of segment points on the best instance
  std::map<int, double> coverage;       // fraction of each instance's points touched
  std::map<int, std::size_t> overlap;   // segment points per instance
};

struct Labels {
  std::map<SegmentId, SegmentMatch> matches;
  std::map<SegmentId, int> node_labels;  // -1 when unmatched
  std::map<IdPair, int> edge_labels;     // directed
};

/// Nearest-neighbor association of segment points to GT points (within
/// kAssociationRadius), best instance by intersection, rejected below 50% or when
/// another instance has more than 10% of its points covered.
std::map<SegmentId, SegmentMatch> match_segments(std::span<const LabelSegment> segments, const GroundTruth& gt);

/// Node labels from matches; edge labels: same part inside an instance, inherited
/// instance relations across instances, none otherwise.
Labels generate_labels(std::span<const LabelSegment> segments, std::span<const IdPair> directed_edges,
                       const GroundTruth& gt, const Vocabulary& vocab);

/// Replays the stream into a map, keeps segments with at least min_segment_points,
/// connects them with the proximity rule and labels everything.
struct ReconstructedScene {
  SceneMap map;
  TrainingScene scene;
  Labels labels;
};
ReconstructedScene reconstruct(std::span<const FrameUpdate> frames, const GroundTruth& gt, const Vocabulary& vocab,
                               const GraphConfig& graph);

}  // namespace sgf
