#pragma once

#include <random>
#include <vector>

#include "sgf/neighbor_graph.hpp"
#include "sgf/scene_map.hpp"
#include "sgf/spn.hpp"

namespace sgf::testing {

inline Point at(double x, double y, double z) {
  Point p;
  p.position = Vec3(x, y, z);
  return p;
}

inline std::vector<Point> random_points(std::mt19937_64& rng, int n, const Vec3& center = Vec3::Zero(),
                                        double extent = 1.0) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Point> pts(static_cast<std::size_t>(n));
  for (auto& p : pts) p.position = center + extent * Vec3(u(rng), u(rng), u(rng));
  return pts;
}

/// Snapshot of a segment with `n` random points around `center`.
inline NodeSnapshot random_node(std::mt19937_64& rng, SegmentId id, int n, const Vec3& center, double extent) {
  NodeSnapshot s;
  s.id = id;
  s.points = random_points(rng, n, center, extent);
  s.point_count = s.points.size();
  s.properties = recompute_properties(s.points);
  return s;
}

/// Small model for fast numeric tests.
inline ModelConfig tiny_config() {
  ModelConfig c;
  c.encoder_dims = {8, 12};
  c.node_dim = 8;
  c.edge_dim = 6;
  c.query_dim = 8;
  c.target_dim = 4;
  c.heads = 2;
  c.num_classes = 3;
  c.num_predicates = 4;
  return c;
}

/// Random connected-ish undirected graph over ids 1..n with both directions of every edge.
struct RandomGraph {
  std::vector<NodeSnapshot> nodes;
  std::vector<IdPair> undirected_edges;
  std::vector<IdPair> directed_edges;
};

inline RandomGraph random_graph(std::mt19937_64& rng, int n, double edge_probability, int points = 12) {
  RandomGraph g;
  std::uniform_real_distribution<double> pos(-2.0, 2.0), ext(0.2, 1.0), u(0.0, 1.0);
  for (int i = 1; i <= n; ++i) g.nodes.push_back(random_node(rng, i, points, Vec3(pos(rng), pos(rng), pos(rng)), ext(rng)));
  for (int i = 1; i <= n; ++i)
    for (int j = i + 1; j <= n; ++j)
      if (u(rng) < edge_probability) g.undirected_edges.emplace_back(i, j);
  for (const auto& [a, b] : g.undirected_edges) {
    g.directed_edges.emplace_back(a, b);
    g.directed_edges.emplace_back(b, a);
  }
  return g;
}

}  // namespace sgf::testing
