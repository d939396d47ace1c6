#include "sgf/scene_map.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

namespace sgf {

void require_finite(const Mat& m, const char* what) {
  if (!m.allFinite()) throw NumericError(std::string("non-finite values in ") + what);
}

ShapeProperties recompute_properties(std::span<const Point> points) {
  if (points.empty()) throw DataError("recompute_properties: empty segment");
  const double n = static_cast<double>(points.size());
  Vec3 sum = Vec3::Zero();
  Vec3 lo = points.front().position;
  Vec3 hi = lo;
  for (const auto& p : points) {
    sum += p.position;
    lo = lo.cwiseMin(p.position);
    hi = hi.cwiseMax(p.position);
  }
  ShapeProperties out;
  out.centroid = sum / n;
  Vec3 sq = Vec3::Zero();
  for (const auto& p : points) sq += (p.position - out.centroid).cwiseAbs2();
  out.std = (sq / n).cwiseSqrt();
  out.bbox = hi - lo;
  out.length = out.bbox.maxCoeff();
  out.volume = out.bbox.prod();
  return out;
}

void RunningMoments::add(const Vec3& p) {
  ++count_;
  const Vec3 delta = p - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta.cwiseProduct(p - mean_);
  min_ = min_.cwiseMin(p);
  max_ = max_.cwiseMax(p);
}

void RunningMoments::merge(const RunningMoments& other) {
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_);
  const double nb = static_cast<double>(other.count_);
  const double n = na + nb;
  const Vec3 delta = other.mean_ - mean_;
  mean_ += delta * (nb / n);
  m2_ += other.m2_ + delta.cwiseAbs2() * (na * nb / n);
  count_ += other.count_;
  min_ = min_.cwiseMin(other.min_);
  max_ = max_.cwiseMax(other.max_);
}

ShapeProperties RunningMoments::properties() const {
  ShapeProperties out;
  if (count_ == 0) return out;
  out.centroid = mean_;
  // Clamp at zero before the square root.
  out.std = (m2_ / static_cast<double>(count_)).cwiseMax(0.0).cwiseSqrt();
  out.bbox = (max_ - min_).cwiseMax(0.0);
  out.length = out.bbox.maxCoeff();
  out.volume = out.bbox.prod();
  return out;
}

const Segment* SceneMap::find(SegmentId id) const {
  auto it = segments_.find(id);
  return it == segments_.end() ? nullptr : &it->second;
}

Segment* SceneMap::find(SegmentId id) {
  auto it = segments_.find(id);
  return it == segments_.end() ? nullptr : &it->second;
}

void SceneMap::mark_predicted(SegmentId id, FrameIndex frame) {
  if (auto* s = find(id)) {
    s->last_predicted_frame = frame;
    s->last_predicted_size = s->size();
  }
}

void SceneMap::validate(const FrameUpdate& update) const {
  std::set<SegmentId> live;
  for (const auto& [id, _] : segments_) live.insert(id);
  for (const auto& [id, pts] : update.additions) {
    if (pts.empty() && !live.contains(id))
      throw DataError("frame " + std::to_string(update.frame) + ": new segment " +
                      std::to_string(id) + " has no points");
    for (const auto& p : pts) {
      if (!p.position.allFinite() || !p.normal.allFinite() || !p.color.allFinite())
        throw DataError("frame " + std::to_string(update.frame) + ": non-finite point in segment " +
                        std::to_string(id));
    }
    live.insert(id);
  }
  std::set<SegmentId> sources;
  for (const auto& [src, dst] : update.merges) {
    const std::string where = "frame " + std::to_string(update.frame) + ": merge " +
                              std::to_string(src) + "->" + std::to_string(dst);
    if (src == dst) throw DataError(where + " merges a segment into itself");
    if (!sources.insert(src).second) throw DataError(where + " repeats a merge source");
    if (!live.contains(src)) throw DataError(where + " references unknown source");
    if (!live.contains(dst)) throw DataError(where + " references unknown destination");
    live.erase(src);
  }
  for (SegmentId id : update.removals) {
    if (!live.contains(id))
      throw DataError("frame " + std::to_string(update.frame) + ": removal of unknown segment " +
                      std::to_string(id));
    live.erase(id);
  }
}

FrameDelta SceneMap::apply_frame(const FrameUpdate& update) {
  validate(update);
  frame_ = update.frame;

  std::set<SegmentId> touched;
  FrameDelta delta;
  for (const auto& [id, pts] : update.additions) {
    auto [it, inserted] = segments_.try_emplace(id);
    Segment& seg = it->second;
    if (inserted) {
      seg.id = id;
      seg.created_frame = update.frame;
    }
    if (pts.empty()) continue;
    seg.points.insert(seg.points.end(), pts.begin(), pts.end());
    for (const auto& p : pts) seg.moments.add(p.position);
    seg.last_update_frame = update.frame;
    touched.insert(id);
  }
  for (const auto& [src, dst] : update.merges) {
    auto node = segments_.extract(src);
    Segment& from = node.mapped();
    Segment& into = segments_.at(dst);
    into.points.insert(into.points.end(), std::make_move_iterator(from.points.begin()),
                       std::make_move_iterator(from.points.end()));
    into.moments.merge(from.moments);
    into.last_update_frame = update.frame;
    touched.erase(src);
    touched.insert(dst);
    delta.removed.push_back(src);
    delta.merges.emplace_back(src, dst);
  }
  for (SegmentId id : update.removals) {
    segments_.erase(id);
    touched.erase(id);
    delta.removed.push_back(id);
  }
  delta.touched.assign(touched.begin(), touched.end());
  return delta;
}

}  // namespace sgf
