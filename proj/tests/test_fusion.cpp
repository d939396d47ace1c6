#include <doctest.h>

#include <algorithm>
#include <random>

#include <json.hpp>

#include "sgf/fusion.hpp"

using namespace sgf;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Eigen::VectorXd random_distribution(std::mt19937_64& rng, int n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = u(rng);
  return v / v.sum();
}

/// Prediction over nodes with given class distributions and directed edges with given predicate argmax.
Prediction make_prediction(const std::vector<SegmentId>& ids, const std::vector<int>& classes,
                           const std::vector<std::pair<IdPair, int>>& edges, int num_classes = 3,
                           int num_predicates = 4) {
  Prediction p;
  p.node_ids = ids;
  p.node_probabilities = Mat::Constant(static_cast<Eigen::Index>(ids.size()), num_classes, 0.1 / (num_classes - 1));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    p.node_probabilities(static_cast<Eigen::Index>(i), classes[i]) = 0.9;
    p.node_sizes.push_back(10 * (i + 1));
    p.node_properties.emplace_back();
  }
  p.edge_probabilities = Mat::Constant(static_cast<Eigen::Index>(edges.size()), num_predicates, 0.1 / (num_predicates - 1));
  for (std::size_t i = 0; i < edges.size(); ++i) {
    p.edges.push_back(edges[i].first);
    p.edge_probabilities(static_cast<Eigen::Index>(i), edges[i].second) = 0.9;
  }
  return p;
}

}  // namespace

TEST_CASE("fuse examples") {
  const auto a = fuse(FusedDistribution{vec({0.2, 0.8}), 1.0}, vec({0.8, 0.2}));
  CHECK(a.probabilities[0] == doctest::Approx(0.5));
  CHECK(a.probabilities[1] == doctest::Approx(0.5));
  CHECK(a.weight == 2.0);

  const auto stored = vec({0.3, 0.7});
  const auto b = fuse(FusedDistribution{stored, 100.0}, vec({0.9, 0.1}));
  const Eigen::VectorXd expect = (vec({0.9, 0.1}) + 100.0 * stored) / 101.0;
  CHECK((b.probabilities - expect).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(b.weight == 100.0);

  const auto c = fuse(FusedDistribution{stored, 4.0}, stored);
  CHECK((c.probabilities - stored).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(c.weight == 5.0);

  const auto first = fuse(FusedDistribution{}, stored);
  CHECK(first.probabilities == stored);
  CHECK(first.weight == 1.0);
}

TEST_CASE("fuse rejects unnormalized input") {
  CHECK_THROWS_AS(fuse(FusedDistribution{vec({0.5, 0.5}), 1.0}, vec({0.5, 0.6})), DataError);
  CHECK_THROWS_AS(fuse(FusedDistribution{vec({0.5, 0.4}), 1.0}, vec({0.5, 0.5})), DataError);
  CHECK_NOTHROW(fuse(FusedDistribution{vec({0.5, 0.5}), 1.0}, vec({0.5, 0.5 + 5e-7})));
}

TEST_CASE("weights are monotone, clamped and distributions stay normalized") {
  std::mt19937_64 rng(1);
  FusedDistribution d;
  double last = 0;
  for (int i = 0; i < 300; ++i) {
    d = fuse(d, random_distribution(rng, 6));
    CHECK(d.weight >= last);
    CHECK(d.weight <= 100.0);
    CHECK(std::abs(d.probabilities.sum() - 1.0) < 1e-9);
    last = d.weight;
  }
  CHECK(d.weight == 100.0);
}

TEST_CASE("predictions are stored, fused and skipped") {
  FusedSceneGraph g;
  g.apply_prediction(make_prediction({1, 2}, {0, 2}, {{{1, 2}, 1}}));
  REQUIRE(g.nodes().size() == 2);
  CHECK(g.nodes().at(1).classes.weight == 1.0);
  CHECK(g.nodes().at(2).classes.argmax() == 2);
  CHECK(g.nodes().at(2).size == 20);

  g.apply_prediction(make_prediction({1, 2}, {0, 2}, {{{1, 2}, 1}}));
  CHECK(g.nodes().at(1).classes.weight == 2.0);
  CHECK(g.nodes().at(1).classes.argmax() == 0);
  CHECK(g.edges().at({1, 2}).weight == 2.0);

  g.remove_segment(2);
  CHECK(!g.nodes().contains(2));
  CHECK(g.edges().empty());
  g.apply_prediction(make_prediction({1, 2}, {0, 2}, {{{1, 2}, 1}}));
  CHECK(!g.nodes().contains(2));
  CHECK(g.skipped() > 0);
  CHECK(g.nodes().at(1).classes.weight == 3.0);
}

TEST_CASE("instances need same part in both directions") {
  SUBCASE("no same part edges") {
    FusedSceneGraph g;
    g.apply_prediction(make_prediction({1, 2, 3}, {0, 1, 2}, {{{1, 2}, 0}, {{2, 1}, 0}}));
    CHECK(g.cluster_instances().size() == 3);
  }
  SUBCASE("chain of three") {
    FusedSceneGraph g;
    g.apply_prediction(make_prediction({1, 2, 3}, {1, 1, 1},
                                       {{{1, 2}, 1}, {{2, 1}, 1}, {{2, 3}, 1}, {{3, 2}, 1}}));
    const auto inst = g.cluster_instances();
    REQUIRE(inst.size() == 1);
    CHECK(inst[0].members == std::vector<SegmentId>{1, 2, 3});
    CHECK(inst[0].id == 1);
  }
  SUBCASE("one direction only") {
    FusedSceneGraph g;
    g.apply_prediction(make_prediction({1, 2}, {1, 1}, {{{1, 2}, 1}, {{2, 1}, 2}}));
    CHECK(g.cluster_instances().size() == 2);
  }
}

TEST_CASE("instance class is a size-weighted vote") {
  FusedSceneGraph g;
  // sizes 10, 20, 30; classes 0, 0, 2 -> class 0 has 30, class 2 has 30: tie goes to 0
  g.apply_prediction(make_prediction({1, 2, 3}, {0, 0, 2}, {{{1, 2}, 1}, {{2, 1}, 1}, {{2, 3}, 1}, {{3, 2}, 1}}));
  auto inst = g.cluster_instances();
  REQUIRE(inst.size() == 1);
  CHECK(inst[0].label == 0);
  FusedSceneGraph h;
  h.apply_prediction(make_prediction({1, 2, 3}, {0, 2, 2}, {{{1, 2}, 1}, {{2, 1}, 1}, {{2, 3}, 1}, {{3, 2}, 1}}));
  inst = h.cluster_instances();
  CHECK(inst[0].label == 2);
}

TEST_CASE("clusters equal flood-fill components on random graphs") {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 8;
    std::vector<SegmentId> ids;
    std::vector<int> classes;
    for (int i = 1; i <= n; ++i) {
      ids.push_back(i);
      classes.push_back(static_cast<int>(rng() % 3));
    }
    std::vector<std::pair<IdPair, int>> edges;
    std::map<IdPair, int> arg;
    for (int i = 1; i <= n; ++i)
      for (int j = 1; j <= n; ++j)
        if (i != j && u(rng) < 0.3) {
          const int p = u(rng) < 0.6 ? 1 : 0;
          edges.push_back({{i, j}, p});
          arg[{i, j}] = p;
        }
    FusedSceneGraph g;
    g.apply_prediction(make_prediction(ids, classes, edges));
    // oracle: flood fill over mutual same-part links
    std::map<SegmentId, SegmentId> comp;
    for (SegmentId s : ids) {
      if (comp.contains(s)) continue;
      std::vector<SegmentId> stack{s};
      comp[s] = s;
      while (!stack.empty()) {
        const SegmentId a = stack.back();
        stack.pop_back();
        for (SegmentId b : ids) {
          const auto ab = arg.find({a, b}), ba = arg.find({b, a});
          if (ab != arg.end() && ba != arg.end() && ab->second == 1 && ba->second == 1 && !comp.contains(b)) {
            comp[b] = s;
            stack.push_back(b);
          }
        }
      }
    }
    const auto got = g.instance_of();
    for (SegmentId a : ids)
      for (SegmentId b : ids) CHECK((comp[a] == comp[b]) == (got.at(a) == got.at(b)));
  }
}

TEST_CASE("export documents") {
  FusedSceneGraph empty;
  const auto doc = nlohmann::json::parse(export_graph(empty));
  CHECK(doc["schema_version"] == kGraphSchemaVersion);
  CHECK(doc["nodes"].empty());
  CHECK(doc["edges"].empty());
  CHECK(doc["instances"].empty());

  FusedSceneGraph one;
  one.apply_prediction(make_prediction({4}, {1}, {}));
  const auto d1 = nlohmann::json::parse(export_graph(one, {"a", "b", "c"}));
  CHECK(d1["nodes"].size() == 1);
  CHECK(d1["edges"].empty());
  CHECK(d1["instances"].size() == 1);
  CHECK(d1["nodes"][0]["label"] == "b");
}

TEST_CASE("export round trip is bit exact") {
  std::mt19937_64 rng(3);
  FusedSceneGraph g;
  for (int round = 0; round < 5; ++round) {
    Prediction p;
    p.node_ids = {1, 2, 3};
    p.node_probabilities.resize(3, 5);
    for (int i = 0; i < 3; ++i) {
      p.node_probabilities.row(i) = random_distribution(rng, 5).transpose();
      p.node_sizes.push_back(100 + static_cast<std::size_t>(rng() % 50));
      ShapeProperties sp;
      sp.centroid = Vec3::Random();
      sp.std = Vec3::Random().cwiseAbs();
      sp.bbox = Vec3::Random().cwiseAbs();
      sp.length = sp.bbox.maxCoeff();
      sp.volume = sp.bbox.prod();
      p.node_properties.push_back(sp);
    }
    p.edges = {{1, 2}, {2, 1}, {2, 3}};
    p.edge_probabilities.resize(3, 4);
    for (int i = 0; i < 3; ++i) p.edge_probabilities.row(i) = random_distribution(rng, 4).transpose();
    g.apply_prediction(p);
  }
  const std::string text = export_graph(g);
  const auto back = parse_graph(text);
  REQUIRE(back.nodes().size() == g.nodes().size());
  for (const auto& [id, n] : g.nodes()) {
    const auto& m = back.nodes().at(id);
    CHECK(m.classes.probabilities == n.classes.probabilities);
    CHECK(m.classes.weight == n.classes.weight);
    CHECK(m.size == n.size);
    CHECK(m.properties.centroid == n.properties.centroid);
    CHECK(m.properties.volume == n.properties.volume);
  }
  for (const auto& [e, d] : g.edges()) CHECK(back.edges().at(e).probabilities == d.probabilities);
  CHECK(export_graph(back) == text);
  CHECK_THROWS(parse_graph("{\"schema_version\": 99}"));
}
