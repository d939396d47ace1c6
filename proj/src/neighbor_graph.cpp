#include "sgf/neighbor_graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace sgf {

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

void record(EdgeDelta& delta, bool added, const IdPair& e) {
  auto& into = added ? delta.added : delta.removed;
  auto& other = added ? delta.removed : delta.added;
  if (auto it = std::find(other.begin(), other.end(), e); it != other.end()) {
    other.erase(it);
    return;
  }
  into.push_back(e);
}

void normalize(EdgeDelta& delta) {
  std::sort(delta.added.begin(), delta.added.end());
  std::sort(delta.removed.begin(), delta.removed.end());
}

}  // namespace

double bbox_distance(const Vec3& min_a, const Vec3& max_a, const Vec3& min_b, const Vec3& max_b) {
  const Vec3 gap = (min_a - max_b).cwiseMax(min_b - max_a).cwiseMax(0.0);
  return gap.norm();
}

std::vector<Point> sample_points(std::span<const Point> points, std::size_t count, std::uint64_t seed,
                                 SegmentId id) {
  if (points.size() <= count) return {points.begin(), points.end()};
  std::mt19937_64 rng(splitmix(seed ^ splitmix(static_cast<std::uint64_t>(id)) ^
                               (static_cast<std::uint64_t>(points.size()) << 1)));
  std::vector<Point> out(points.begin(), points.begin() + static_cast<std::ptrdiff_t>(count));
  for (std::size_t i = count; i < points.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(0, i);
    const std::size_t j = pick(rng);
    if (j < count) out[j] = points[i];
  }
  return out;
}

void NeighborGraph::add_node(SegmentId id) { adjacency_.try_emplace(id); }

void NeighborGraph::remove_node(SegmentId id) {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) return;
  for (SegmentId n : it->second) adjacency_[n].erase(id);
  adjacency_.erase(it);
  frozen_.erase(id);
}

void NeighborGraph::add_edge(SegmentId a, SegmentId b) {
  if (a == b) return;
  adjacency_[a].insert(b);
  adjacency_[b].insert(a);
}

void NeighborGraph::remove_edge(SegmentId a, SegmentId b) {
  if (auto it = adjacency_.find(a); it != adjacency_.end()) it->second.erase(b);
  if (auto it = adjacency_.find(b); it != adjacency_.end()) it->second.erase(a);
}

bool NeighborGraph::has_edge(SegmentId a, SegmentId b) const {
  auto it = adjacency_.find(a);
  return it != adjacency_.end() && it->second.contains(b);
}

std::size_t NeighborGraph::edge_count() const {
  std::size_t n = 0;
  for (const auto& [_, nbrs] : adjacency_) n += nbrs.size();
  return n / 2;
}

std::vector<IdPair> NeighborGraph::directed_edges() const {
  std::vector<IdPair> out;
  for (const auto& [a, nbrs] : adjacency_)
    for (SegmentId b : nbrs) out.emplace_back(a, b);
  return out;
}

EdgeDelta NeighborGraph::maintain_edges(const SceneMap& map, std::span<const SegmentId> touched,
                                        double threshold) {
  EdgeDelta delta;
  for (SegmentId id : touched) {
    if (!contains(id)) continue;
    const Segment* a = map.find(id);
    if (!a) continue;
    for (const auto& [other, _] : adjacency_) {
      if (other == id) continue;
      const Segment* b = map.find(other);
      if (!b) continue;
      const double d = bbox_distance(a->moments.min(), a->moments.max(), b->moments.min(), b->moments.max());
      const bool want = d <= threshold;
      const bool have = has_edge(id, other);
      if (want && !have) {
        add_edge(id, other);
        record(delta, true, undirected(id, other));
      } else if (!want && have) {
        remove_edge(id, other);
        record(delta, false, undirected(id, other));
      }
    }
  }
  normalize(delta);
  return delta;
}

EdgeDelta NeighborGraph::full_sweep(const SceneMap& map) {
  std::vector<SegmentId> all;
  for (const auto& [id, _] : adjacency_) all.push_back(id);
  return maintain_edges(map, all, config_.proximity_threshold);
}

EdgeDelta NeighborGraph::update(const SceneMap& map, const FrameDelta& frame_delta) {
  EdgeDelta delta;
  for (SegmentId id : frame_delta.removed) {
    auto it = adjacency_.find(id);
    if (it == adjacency_.end()) continue;
    for (SegmentId n : it->second) delta.removed.push_back(undirected(id, n));
    remove_node(id);
  }
  std::vector<SegmentId> live_touched;
  for (SegmentId id : frame_delta.touched) {
    const Segment* seg = map.find(id);
    if (!seg) continue;
    if (!contains(id) && seg->size() >= config_.min_segment_points) add_node(id);
    if (contains(id)) live_touched.push_back(id);
  }
  auto merge_into = [&delta](const EdgeDelta& d) {
    for (const auto& e : d.added) record(delta, true, e);
    for (const auto& e : d.removed) record(delta, false, e);
  };
  merge_into(maintain_edges(map, live_touched, config_.proximity_threshold));
  if (config_.full_sweep_interval > 0 && map.current_frame() - last_sweep_ >= config_.full_sweep_interval) {
    last_sweep_ = map.current_frame();
    merge_into(full_sweep(map));
  }
  normalize(delta);
  return delta;
}

std::vector<SegmentId> NeighborGraph::flag_for_prediction(const SceneMap& map, FrameIndex frame) const {
  std::vector<SegmentId> flagged;
  for (const auto& [id, _] : adjacency_) {
    const Segment* seg = map.find(id);
    if (!seg) continue;
    if (!seg->ever_predicted()) {
      flagged.push_back(id);
      continue;
    }
    const double last = static_cast<double>(seg->last_predicted_size);
    const double now = static_cast<double>(seg->size());
    if (std::abs(now - last) > config_.resize_ratio * last ||
        frame - seg->last_predicted_frame >= config_.stale_frames) {
      flagged.push_back(id);
    }
  }
  return flagged;
}

NodeSnapshot NeighborGraph::freeze(const Segment& seg) const {
  NodeSnapshot n;
  n.id = seg.id;
  n.point_count = seg.size();
  n.properties = seg.properties();
  n.points = sample_points(seg.points, config_.points_per_segment, config_.sample_seed, seg.id);
  return n;
}

SubgraphSnapshot NeighborGraph::extract_subgraph(const SceneMap& map, std::span<const SegmentId> flagged,
                                                 FrameIndex frame) const {
  SubgraphSnapshot snap;
  snap.frame = frame;
  std::set<SegmentId> flag_set;
  for (SegmentId id : flagged)
    if (contains(id) && map.find(id)) flag_set.insert(id);
  if (flag_set.empty()) return snap;
  snap.flagged.assign(flag_set.begin(), flag_set.end());

  std::set<SegmentId> included = neighborhood(adjacency_, flag_set, 1);
  for (SegmentId id : included) {
    const Segment* seg = map.find(id);
    if (!seg) continue;
    if (!flag_set.contains(id)) {
      if (auto it = frozen_.find(id); it != frozen_.end()) {
        snap.nodes.push_back(it->second);
        continue;
      }
    }
    snap.nodes.push_back(freeze(*seg));
  }
  for (SegmentId a : included) {
    for (SegmentId b : adjacency_.at(a))
      if (a < b && included.contains(b)) snap.edges.emplace_back(a, b);
  }
  return snap;
}

void NeighborGraph::commit(const SubgraphSnapshot& snapshot, SceneMap& map) {
  std::set<SegmentId> flagged(snapshot.flagged.begin(), snapshot.flagged.end());
  for (const auto& node : snapshot.nodes) {
    if (!contains(node.id)) continue;
    if (flagged.contains(node.id) || !frozen_.contains(node.id)) frozen_[node.id] = node;
  }
  for (SegmentId id : snapshot.flagged) map.mark_predicted(id, snapshot.frame);
}

std::set<SegmentId> neighborhood(const Adjacency& adjacency, const std::set<SegmentId>& seeds, int hops) {
  std::set<SegmentId> ball = seeds;
  std::vector<SegmentId> frontier(seeds.begin(), seeds.end());
  for (int h = 0; h < hops && !frontier.empty(); ++h) {
    std::vector<SegmentId> next;
    for (SegmentId id : frontier) {
      auto it = adjacency.find(id);
      if (it == adjacency.end()) continue;
      for (SegmentId n : it->second)
        if (ball.insert(n).second) next.push_back(n);
    }
    frontier = std::move(next);
  }
  return ball;
}

bool RecomputePlan::empty() const {
  return std::all_of(nodes.begin(), nodes.end(), [](const auto& s) { return s.empty(); }) &&
         std::all_of(edges.begin(), edges.end(), [](const auto& s) { return s.empty(); });
}

RecomputePlan mark_dirty_and_plan(const Adjacency& adjacency, const std::set<SegmentId>& changed, int layers) {
  if (layers < 1) throw ConfigError("mark_dirty_and_plan: layer count must be >= 1");
  RecomputePlan plan;
  plan.nodes.resize(static_cast<std::size_t>(layers) + 1);
  plan.edges.resize(static_cast<std::size_t>(layers) + 1);
  for (SegmentId id : changed)
    if (adjacency.contains(id)) plan.nodes[0].insert(id);

  auto incident_edges = [&adjacency](const std::set<SegmentId>& nodes) {
    std::set<IdPair> out;
    for (SegmentId a : nodes) {
      auto it = adjacency.find(a);
      if (it == adjacency.end()) continue;
      for (SegmentId b : it->second) {
        out.emplace(a, b);
        out.emplace(b, a);
      }
    }
    return out;
  };

  plan.edges[0] = incident_edges(plan.nodes[0]);
  for (int l = 1; l <= layers; ++l) {
    const auto& prev = plan.nodes[static_cast<std::size_t>(l - 1)];
    plan.nodes[static_cast<std::size_t>(l)] = neighborhood(adjacency, prev, 1);
    plan.edges[static_cast<std::size_t>(l)] = incident_edges(prev);
  }
  return plan;
}

FeatureCache::Entry& FeatureCache::node_entry(SegmentId id) {
  auto [it, inserted] = nodes_.try_emplace(id);
  if (inserted) {
    it->second.features.resize(static_cast<std::size_t>(layers_) + 1);
    it->second.dirty.assign(static_cast<std::size_t>(layers_) + 2, true);
  }
  return it->second;
}

FeatureCache::Entry& FeatureCache::edge_entry(const IdPair& e) {
  auto [it, inserted] = edges_.try_emplace(e);
  if (inserted) {
    it->second.features.resize(static_cast<std::size_t>(layers_) + 1);
    it->second.dirty.assign(static_cast<std::size_t>(layers_) + 2, true);
  }
  return it->second;
}

void FeatureCache::mark_dirty(const RecomputePlan& plan) {
  for (int l = 0; l <= plan.layers() && l <= layers_; ++l) {
    for (SegmentId id : plan.nodes[static_cast<std::size_t>(l)]) {
      auto& e = node_entry(id);
      e.dirty[static_cast<std::size_t>(l)] = true;
      if (l == layers_) e.dirty.back() = true;
    }
    for (const auto& edge : plan.edges[static_cast<std::size_t>(l)]) {
      auto& e = edge_entry(edge);
      e.dirty[static_cast<std::size_t>(l)] = true;
      if (l == layers_) e.dirty.back() = true;
    }
  }
}

void FeatureCache::erase_node(SegmentId id) { nodes_.erase(id); }
void FeatureCache::erase_edge(const IdPair& edge) { edges_.erase(edge); }

void FeatureCache::set_node(SegmentId id, int layer, Mat value) {
  auto& e = node_entry(id);
  e.features[static_cast<std::size_t>(layer)] = std::move(value);
  e.dirty[static_cast<std::size_t>(layer)] = false;
}

void FeatureCache::set_edge(const IdPair& edge, int layer, Mat value) {
  auto& e = edge_entry(edge);
  e.features[static_cast<std::size_t>(layer)] = std::move(value);
  e.dirty[static_cast<std::size_t>(layer)] = false;
}

void FeatureCache::set_node_logits(SegmentId id, Mat value) {
  auto& e = node_entry(id);
  e.logits = std::move(value);
  e.dirty.back() = false;
}

void FeatureCache::set_edge_logits(const IdPair& edge, Mat value) {
  auto& e = edge_entry(edge);
  e.logits = std::move(value);
  e.dirty.back() = false;
}

const Mat& FeatureCache::node(SegmentId id, int layer) const {
  const auto& e = nodes_.at(id);
  if (e.dirty[static_cast<std::size_t>(layer)]) throw std::logic_error("read of dirty node feature");
  return e.features[static_cast<std::size_t>(layer)];
}

const Mat& FeatureCache::edge(const IdPair& edge, int layer) const {
  const auto& e = edges_.at(edge);
  if (e.dirty[static_cast<std::size_t>(layer)]) throw std::logic_error("read of dirty edge feature");
  return e.features[static_cast<std::size_t>(layer)];
}

const Mat& FeatureCache::node_logits(SegmentId id) const {
  const auto& e = nodes_.at(id);
  if (e.dirty.back()) throw std::logic_error("read of dirty node logits");
  return e.logits;
}

const Mat& FeatureCache::edge_logits(const IdPair& edge) const {
  const auto& e = edges_.at(edge);
  if (e.dirty.back()) throw std::logic_error("read of dirty edge logits");
  return e.logits;
}

bool FeatureCache::node_dirty(SegmentId id, int layer) const {
  auto it = nodes_.find(id);
  return it == nodes_.end() || it->second.dirty[static_cast<std::size_t>(layer)];
}

bool FeatureCache::edge_dirty(const IdPair& edge, int layer) const {
  auto it = edges_.find(edge);
  return it == edges_.end() || it->second.dirty[static_cast<std::size_t>(layer)];
}

}  // namespace sgf
