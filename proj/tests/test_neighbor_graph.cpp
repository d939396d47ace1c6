#include <doctest.h>

#include <random>

#include "helpers.hpp"
#include "sgf/neighbor_graph.hpp"

using namespace sgf;
using sgf::testing::at;

namespace {

std::vector<Point> box_corners(const Vec3& lo, const Vec3& hi) {
  return {at(lo.x(), lo.y(), lo.z()), at(hi.x(), hi.y(), hi.z())};
}

GraphConfig small_config() {
  GraphConfig c;
  c.min_segment_points = 1;
  c.full_sweep_interval = 0;
  return c;
}

Adjacency chain() { return {{1, {2}}, {2, {1, 3}}, {3, {2}}}; }

}  // namespace

TEST_CASE("box gap below the threshold connects") {
  const Vec3 lo(0, 0, 0), hi(1, 1, 1);
  CHECK(bbox_distance(lo, hi, lo + Vec3(1.4, 0, 0), hi + Vec3(1.4, 0, 0)) == doctest::Approx(0.4));
  CHECK(bbox_distance(lo, hi, lo + Vec3(1.6, 0, 0), hi + Vec3(1.6, 0, 0)) == doctest::Approx(0.6));
  CHECK(bbox_distance(lo, hi, lo + Vec3(0.5, 0.5, 0), hi + Vec3(0.5, 0.5, 0)) == 0.0);
  // diagonal gaps combine with the Euclidean norm
  CHECK(bbox_distance(lo, hi, lo + Vec3(1.3, 1.4, 0), hi + Vec3(1.3, 1.4, 0)) == doctest::Approx(0.5));

  for (const auto& [shift, expect] : std::vector<std::pair<double, bool>>{{1.4, true}, {1.6, false}, {0.5, true}}) {
    FrameUpdate u;
    u.additions[1] = box_corners(lo, hi);
    u.additions[2] = box_corners(lo + Vec3(shift, 0, 0), hi + Vec3(shift, 0, 0));
    NeighborGraph g(small_config());
    SceneMap map;
    g.update(map, map.apply_frame(u));
    CHECK(g.has_edge(1, 2) == expect);
    CHECK(g.has_edge(2, 1) == expect);
  }
}

TEST_CASE("edges follow geometry as segments grow and disappear") {
  SceneMap map;
  NeighborGraph g(small_config());
  FrameUpdate f0;
  f0.frame = 0;
  f0.additions[1] = box_corners(Vec3(0, 0, 0), Vec3(1, 1, 1));
  f0.additions[2] = box_corners(Vec3(3, 0, 0), Vec3(4, 1, 1));
  auto d = g.update(map, map.apply_frame(f0));
  CHECK(d.empty());
  FrameUpdate f1;
  f1.frame = 1;
  f1.additions[2] = {at(1.2, 0.5, 0.5)};
  d = g.update(map, map.apply_frame(f1));
  CHECK(d.added == std::vector<IdPair>{{1, 2}});
  FrameUpdate f2;
  f2.frame = 2;
  f2.removals = {2};
  d = g.update(map, map.apply_frame(f2));
  CHECK(d.removed == std::vector<IdPair>{{1, 2}});
  CHECK(!g.contains(2));
  CHECK(g.edge_count() == 0);
}

TEST_CASE("segments below the minimum size stay out of the graph") {
  GraphConfig c = small_config();
  c.min_segment_points = 3;
  SceneMap map;
  NeighborGraph g(c);
  FrameUpdate f0;
  f0.additions[1] = {at(0, 0, 0), at(1, 0, 0)};
  g.update(map, map.apply_frame(f0));
  CHECK(!g.contains(1));
  FrameUpdate f1;
  f1.frame = 1;
  f1.additions[1] = {at(0, 1, 0)};
  g.update(map, map.apply_frame(f1));
  CHECK(g.contains(1));
}

TEST_CASE("resize and staleness rules") {
  GraphConfig c = small_config();
  SceneMap map;
  NeighborGraph g(c);
  FrameUpdate f0;
  f0.frame = 0;
  f0.additions[1] = std::vector<Point>(100, at(0, 0, 0));
  f0.additions[2] = std::vector<Point>(100, at(0.1, 0, 0));
  g.update(map, map.apply_frame(f0));
  CHECK(g.flag_for_prediction(map, 0) == std::vector<SegmentId>{1, 2});  // never predicted
  map.mark_predicted(1, 0);
  map.mark_predicted(2, 0);
  CHECK(g.flag_for_prediction(map, 0).empty());

  FrameUpdate f1;
  f1.frame = 1;
  f1.additions[1] = std::vector<Point>(11, at(0, 0, 0));
  f1.additions[2] = std::vector<Point>(9, at(0.1, 0, 0));
  g.update(map, map.apply_frame(f1));
  CHECK(g.flag_for_prediction(map, 1) == std::vector<SegmentId>{1});  // 111 flagged, 109 not
  CHECK(g.flag_for_prediction(map, 59).size() == 1);
  CHECK(g.flag_for_prediction(map, 61) == std::vector<SegmentId>{1, 2});  // stale
}

TEST_CASE("subgraph extraction takes direct neighbors") {
  SceneMap map;
  NeighborGraph g(small_config());
  FrameUpdate f;
  f.additions[1] = {at(0, 0, 0)};
  f.additions[2] = {at(0.4, 0, 0)};
  f.additions[3] = {at(0.8, 0, 0)};
  map.apply_frame(f);
  for (SegmentId id : {1, 2, 3}) g.add_node(id);
  g.add_edge(1, 2);
  g.add_edge(2, 3);
  auto ids = [](const SubgraphSnapshot& s) {
    std::vector<SegmentId> out;
    for (const auto& n : s.nodes) out.push_back(n.id);
    return out;
  };
  const std::vector<SegmentId> a{1}, b{2}, ac{1, 3};
  auto s = g.extract_subgraph(map, a, 0);
  CHECK(ids(s) == std::vector<SegmentId>{1, 2});
  CHECK(s.edges == std::vector<IdPair>{{1, 2}});
  s = g.extract_subgraph(map, b, 0);
  CHECK(ids(s) == std::vector<SegmentId>{1, 2, 3});
  CHECK(s.edges == std::vector<IdPair>{{1, 2}, {2, 3}});
  s = g.extract_subgraph(map, ac, 0);
  CHECK(ids(s) == std::vector<SegmentId>{1, 2, 3});
  CHECK(s.edges.size() == 2);
  CHECK(g.extract_subgraph(map, {}, 0).empty());
}

TEST_CASE("unflagged neighbors reuse their frozen sample") {
  SceneMap map;
  GraphConfig c = small_config();
  c.points_per_segment = 4;
  NeighborGraph g(c);
  std::mt19937_64 rng(2);
  FrameUpdate f;
  f.additions[1] = sgf::testing::random_points(rng, 20);
  f.additions[2] = sgf::testing::random_points(rng, 20);
  g.update(map, map.apply_frame(f));
  REQUIRE(g.has_edge(1, 2));
  const std::vector<SegmentId> both{1, 2}, one{1};
  auto first = g.extract_subgraph(map, both, 0);
  g.commit(first, map);
  FrameUpdate grow;
  grow.frame = 1;
  grow.additions[2] = sgf::testing::random_points(rng, 20);
  g.update(map, map.apply_frame(grow));
  const auto second = g.extract_subgraph(map, one, 1);
  REQUIRE(second.nodes.size() == 2);
  CHECK(second.nodes[1].point_count == 20);
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(second.nodes[1].points[i].position == first.nodes[1].points[i].position);
}

TEST_CASE("recomputation plans follow hop distance") {
  const auto plan = mark_dirty_and_plan(chain(), {1}, 2);
  CHECK(plan.nodes[0] == std::set<SegmentId>{1});
  CHECK(plan.nodes[1] == std::set<SegmentId>{1, 2});
  CHECK(plan.nodes[2] == std::set<SegmentId>{1, 2, 3});
  CHECK(plan.edges[0] == std::set<IdPair>{{1, 2}, {2, 1}});
  CHECK(plan.edges[2] == std::set<IdPair>{{1, 2}, {2, 1}, {2, 3}, {3, 2}});

  CHECK(mark_dirty_and_plan(chain(), {}, 3).empty());

  Adjacency star{{0, {1, 2, 3, 4}}, {1, {0}}, {2, {0}}, {3, {0}}, {4, {0}}};
  const auto s = mark_dirty_and_plan(star, {0}, 1);
  CHECK(s.nodes[1].size() == 5);
  CHECK_THROWS_AS(mark_dirty_and_plan(star, {0}, 0), ConfigError);
}

TEST_CASE("plan sizes equal BFS balls on random graphs") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 30; ++trial) {
    const auto g = sgf::testing::random_graph(rng, 12, 0.2, 1);
    Adjacency adj;
    for (const auto& n : g.nodes) adj[n.id];
    for (const auto& [a, b] : g.undirected_edges) {
      adj[a].insert(b);
      adj[b].insert(a);
    }
    const SegmentId changed = 1 + static_cast<SegmentId>(rng() % 12);
    const auto plan = mark_dirty_and_plan(adj, {changed}, 2);
    // BFS distances as the oracle
    std::map<SegmentId, int> dist{{changed, 0}};
    std::vector<SegmentId> queue{changed};
    for (std::size_t i = 0; i < queue.size(); ++i)
      for (SegmentId n : adj[queue[i]])
        if (!dist.contains(n)) {
          dist[n] = dist[queue[i]] + 1;
          queue.push_back(n);
        }
    std::size_t max_degree = 0;
    for (const auto& [_, ns] : adj) max_degree = std::max(max_degree, ns.size());
    for (int l = 0; l <= 2; ++l) {
      std::set<SegmentId> ball;
      for (const auto& [id, d] : dist)
        if (d <= l) ball.insert(id);
      CHECK(plan.nodes[static_cast<std::size_t>(l)] == ball);
    }
    CHECK(plan.nodes[2].size() <= 1 + max_degree + max_degree * max_degree);
  }
}

TEST_CASE("feature cache refuses dirty reads") {
  FeatureCache cache(2);
  CHECK_THROWS((void)cache.node(1, 0));
  cache.set_node(1, 0, Mat::Ones(1, 2));
  CHECK(!cache.node_dirty(1, 0));
  CHECK(cache.node(1, 0)(0, 1) == 1.0);
  RecomputePlan plan = mark_dirty_and_plan({{1, {}}}, {1}, 2);
  cache.mark_dirty(plan);
  CHECK(cache.node_dirty(1, 0));
  CHECK_THROWS((void)cache.node(1, 0));
}

TEST_CASE("point samples are deterministic and bounded") {
  std::mt19937_64 rng(4);
  const auto pts = sgf::testing::random_points(rng, 300);
  const auto a = sample_points(pts, 50, 9, 3);
  const auto b = sample_points(pts, 50, 9, 3);
  REQUIRE(a.size() == 50);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].position == b[i].position);
  CHECK(sample_points(pts, 500, 9, 3).size() == 300);
}
