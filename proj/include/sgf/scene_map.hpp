#pragma once

#include <limits>
#include <map>
#include <optional>
#include <span>
#include <vector>

#include "sgf/common.hpp"

namespace sgf {

struct Point {
  Vec3 position = Vec3::Zero();
  Vec3 normal = Vec3::UnitZ();
  Vec3 color = Vec3::Zero();
};

/// Shape descriptors of a segment: centroid, per-axis population std, axis-aligned
/// extents, maximum extent and box volume.
struct ShapeProperties {
  Vec3 centroid = Vec3::Zero();
  Vec3 std = Vec3::Zero();
  Vec3 bbox = Vec3::Zero();
  double length = 0.0;
  double volume = 0.0;
};

/// Batch computation over a full point set (two-pass variance). Throws on empty input.
ShapeProperties recompute_properties(std::span<const Point> points);

/// Streaming moments for a point set. Mean and sum of squared deviations are kept
/// with Welford/Chan updates so that nearly-constant coordinates do not lose
/// precision; min/max give the box.
class RunningMoments {
 public:
  void add(const Vec3& p);
  void merge(const RunningMoments& other);

  [[nodiscard]] std::size_t count() const { return count_; }
  [[nodiscard]] ShapeProperties properties() const;
  [[nodiscard]] const Vec3& min() const { return min_; }
  [[nodiscard]] const Vec3& max() const { return max_; }

 private:
  std::size_t count_ = 0;
  Vec3 mean_ = Vec3::Zero();
  Vec3 m2_ = Vec3::Zero();
  Vec3 min_ = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 max_ = Vec3::Constant(-std::numeric_limits<double>::infinity());
};

struct Segment {
  SegmentId id = 0;
  std::vector<Point> points;
  RunningMoments moments;
  FrameIndex created_frame = 0;
  FrameIndex last_update_frame = 0;
  /// -1 until the segment has been sent for prediction once.
  FrameIndex last_predicted_frame = -1;
  std::size_t last_predicted_size = 0;

  [[nodiscard]] std::size_t size() const { return points.size(); }
  [[nodiscard]] ShapeProperties properties() const { return moments.properties(); }
  [[nodiscard]] bool ever_predicted() const { return last_predicted_frame >= 0; }
};

struct FrameUpdate {
  FrameIndex frame = 0;
  std::map<SegmentId, std::vector<Point>> additions;
  std::vector<IdPair> merges;  // (source, destination)
  std::vector<SegmentId> removals;
};

struct FrameDelta {
  /// Segments whose geometry changed (sorted, unique, all live).
  std::vector<SegmentId> touched;
  /// Segments that no longer exist: merge sources and explicit removals.
  std::vector<SegmentId> removed;
  /// The merges that were applied, in order.
  std::vector<IdPair> merges;
};

/// Owns every live segment. Single writer.
class SceneMap {
 public:
  /// Applies additions, then merges in order, then removals. The update is
  /// validated first; on any unknown reference the map is left untouched and a
  /// DataError is thrown.
  FrameDelta apply_frame(const FrameUpdate& update);

  [[nodiscard]] const Segment* find(SegmentId id) const;
  Segment* find(SegmentId id);
  [[nodiscard]] const std::map<SegmentId, Segment>& segments() const { return segments_; }
  [[nodiscard]] std::size_t size() const { return segments_.size(); }
  [[nodiscard]] FrameIndex current_frame() const { return frame_; }

  void mark_predicted(SegmentId id, FrameIndex frame);

 private:
  void validate(const FrameUpdate& update) const;

  std::map<SegmentId, Segment> segments_;
  FrameIndex frame_ = -1;
};

}  // namespace sgf
