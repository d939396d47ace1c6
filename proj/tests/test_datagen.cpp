#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>

#include "sgf/datagen.hpp"
#include "sgf/point_grid.hpp"
#include "sgf/stream_io.hpp"

using namespace sgf;

namespace {

ObjectSpec floor_spec() {
  ObjectSpec f;
  f.label = "floor";
  f.shape = Shape::HorizontalPlane;
  f.size = Vec3(4, 4, 0);
  f.center = Vec3(0, 0, 0);
  f.points = 800;
  return f;
}

ObjectSpec table_spec(int k) {
  ObjectSpec t;
  t.label = "table";
  t.shape = Shape::Box;
  t.size = Vec3(1.2, 0.6, 0.75);
  t.support = 0;
  t.relation = "standing on";
  t.segments = k;
  t.points = 900;
  return t;
}

GraphConfig label_graph() {
  GraphConfig g;
  g.min_segment_points = 1;
  return g;
}

/// Ground truth with two instances laid out on a line: A = points 0..na-1, B = the next nb.
GroundTruth two_instances(int na, int nb) {
  GroundTruth gt;
  gt.classes = Vocabulary::desk().classes;
  for (int i = 0; i < na + nb; ++i) {
    gt.points.emplace_back(0.1 * i, 0, 0);
    gt.instance.push_back(i < na ? 1 : 2);
    gt.label.push_back(i < na ? 2 : 4);
  }
  gt.instance_label = {{1, 2}, {2, 4}};
  return gt;
}

LabelSegment segment_on(SegmentId id, const GroundTruth& gt, int a_from, int a_count, int b_from, int b_count,
                        int stray) {
  LabelSegment s{id, {}};
  for (int i = 0; i < a_count; ++i) s.points.push_back(gt.points[static_cast<std::size_t>(a_from + i)]);
  for (int i = 0; i < b_count; ++i) s.points.push_back(gt.points[static_cast<std::size_t>(b_from + i)]);
  for (int i = 0; i < stray; ++i) s.points.emplace_back(0.1 * i, 5.0, 0);
  return s;
}

}  // namespace

TEST_CASE("vocabularies") {
  const auto desk = Vocabulary::desk();
  CHECK(desk.classes == std::vector<std::string>{"floor", "wall", "table", "chair", "box"});
  CHECK(desk.predicates.size() == 4);
  CHECK(desk.predicates[kNonePredicate] == "none");
  CHECK(desk.predicates[kSamePartPredicate] == "same part");
  CHECK(desk.stuff == std::set<int>{0, 1});
  const auto full = Vocabulary::full();
  CHECK(full.predicates.size() == 8);
  CHECK(full.predicate_index("hanging on") >= 0);
  CHECK(full.class_index("sofa") == -1);
}

TEST_CASE("one box in one frame") {
  SceneSpec layout;
  ObjectSpec box;
  box.label = "box";
  box.points = 300;
  layout.objects = {box};
  layout.frames = 1;
  std::mt19937_64 rng(1);
  const auto g = generate_scene(layout, rng);
  REQUIRE(g.frames.size() == 1);
  CHECK(g.frames[0].additions.size() == 1);
  CHECK(g.truth.instance_label.size() == 1);
  CHECK(g.truth.points.size() == g.frames[0].additions.begin()->second.size());
  const auto r = reconstruct(g.frames, g.truth, Vocabulary::desk(), label_graph());
  CHECK(r.labels.node_labels.begin()->second == Vocabulary::desk().class_index("box"));
}

TEST_CASE("an over-segmented table on the floor") {
  SceneSpec layout;
  layout.objects = {floor_spec(), table_spec(3)};
  layout.frames = 5;
  std::mt19937_64 rng(2);
  const auto g = generate_scene(layout, rng);
  const auto vocab = Vocabulary::desk();
  const auto r = reconstruct(g.frames, g.truth, vocab, label_graph());
  std::vector<SegmentId> table, floor;
  for (const auto& [id, label] : r.labels.node_labels) {
    if (label == vocab.class_index("table")) table.push_back(id);
    if (label == vocab.class_index("floor")) floor.push_back(id);
  }
  CHECK(table.size() == 3);
  CHECK(floor.size() == 1);
  int same = 0, standing = 0;
  for (const auto& [e, p] : r.labels.edge_labels) {
    const bool a_table = std::count(table.begin(), table.end(), e.first) > 0;
    const bool b_table = std::count(table.begin(), table.end(), e.second) > 0;
    if (a_table && b_table) {
      CHECK(p == kSamePartPredicate);
      ++same;
    } else if (a_table) {
      CHECK(p == vocab.predicate_index("standing on"));
      ++standing;
    } else {
      CHECK(p == kNonePredicate);
    }
  }
  CHECK(same >= 4);  // at least the two adjacent slab pairs, both directions
  CHECK(standing >= 1);
}

TEST_CASE("points are revealed monotonically") {
  SceneSpec layout;
  ObjectSpec box;
  box.label = "box";
  box.points = 1000;
  box.size = Vec3(2, 1, 1);
  layout.objects = {box};
  layout.frames = 10;
  std::mt19937_64 rng(3);
  const auto g = generate_scene(layout, rng);
  CHECK(g.frames.size() == 10);
  SceneMap map;
  std::size_t last = 0;
  for (const auto& f : g.frames) {
    map.apply_frame(f);
    std::size_t total = 0;
    for (const auto& [_, s] : map.segments()) total += s.size();
    CHECK(total >= last);
    last = total;
  }
  CHECK(last == 1000);
}

TEST_CASE("merges fold the extra piece into its object") {
  std::mt19937_64 rng(4);
  SceneSpec layout;
  layout.objects = {floor_spec(), table_spec(2)};
  layout.merges = {{1, 3}};
  const auto g = generate_scene(layout, rng);
  std::size_t merges = 0;
  for (const auto& f : g.frames) merges += f.merges.size();
  CHECK(merges == 1);
  SceneMap map;
  for (const auto& f : g.frames) map.apply_frame(f);
  CHECK(map.size() == 3);
}

TEST_CASE("invalid specs are rejected") {
  const auto vocab = Vocabulary::desk();
  SceneSpec layout;
  layout.objects = {floor_spec()};
  layout.objects[0].label = "sofa";
  CHECK_THROWS_AS(layout.validate(vocab), ConfigError);
  layout.objects = {floor_spec(), table_spec(1)};
  layout.objects[1].support = 5;
  CHECK_THROWS_AS(layout.validate(vocab), ConfigError);
  layout.objects[1].support = 1;
  CHECK_THROWS_AS(layout.validate(vocab), ConfigError);
  layout.objects[1].support = 0;
  layout.objects[1].points = 0;
  CHECK_THROWS_AS(layout.validate(vocab), ConfigError);
  layout.objects[1].points = 100;
  CHECK_NOTHROW(layout.validate(vocab));
}

TEST_CASE("the 50 and 10 percent rules") {
  const auto vocab = Vocabulary::desk();
  SUBCASE("60 percent on A, 8 percent of B covered") {
    const auto gt = two_instances(100, 100);
    const std::vector<LabelSegment> segs{segment_on(1, gt, 0, 12, 100, 8, 0)};
    const auto m = match_segments(segs, gt).at(1);
    CHECK(m.instance == 1);
    CHECK(m.intersection == doctest::Approx(0.6));
    CHECK(m.coverage.at(2) == doctest::Approx(0.08));
  }
  SUBCASE("60 percent on A but 15 percent of B covered") {
    const auto gt = two_instances(100, 20);
    const std::vector<LabelSegment> segs{segment_on(1, gt, 0, 12, 100, 3, 5)};
    const auto m = match_segments(segs, gt).at(1);
    CHECK(m.intersection == doctest::Approx(0.6));
    CHECK(m.coverage.at(2) == doctest::Approx(0.15));
    CHECK(m.instance == -1);
    const auto l = generate_labels(segs, {}, gt, vocab);
    CHECK(l.node_labels.at(1) == -1);
  }
  SUBCASE("below half on the best instance") {
    const auto gt = two_instances(100, 100);
    const std::vector<LabelSegment> segs{segment_on(1, gt, 0, 4, 100, 0, 6)};
    CHECK(match_segments(segs, gt).at(1).instance == -1);
  }
  SUBCASE("co-instance segments get same part both ways") {
    auto gt = two_instances(100, 100);
    gt.relations = {{1, 2, "attached to"}};
    const std::vector<LabelSegment> segs{segment_on(1, gt, 0, 50, 0, 0, 0), segment_on(2, gt, 50, 50, 0, 0, 0),
                                         segment_on(3, gt, 100, 100, 0, 0, 0), segment_on(4, gt, 0, 0, 0, 0, 10)};
    const std::vector<IdPair> edges{{1, 2}, {2, 1}, {1, 3}, {3, 1}, {2, 4}, {4, 2}};
    const auto l = generate_labels(segs, edges, gt, vocab);
    CHECK(l.edge_labels.at({1, 2}) == kSamePartPredicate);
    CHECK(l.edge_labels.at({2, 1}) == kSamePartPredicate);
    CHECK(l.edge_labels.at({1, 3}) == vocab.predicate_index("attached to"));
    CHECK(l.edge_labels.at({3, 1}) == kNonePredicate);
    CHECK(l.edge_labels.at({2, 4}) == kNonePredicate);
    CHECK(l.edge_labels.at({4, 2}) == kNonePredicate);
    CHECK(l.node_labels.at(4) == -1);
    CHECK(l.node_labels.at(3) == 4);
  }
}

TEST_CASE("labels are idempotent and order independent") {
  std::mt19937_64 rng(5);
  const auto g = generate_scene(random_room(rng), rng);
  auto r = reconstruct(g.frames, g.truth, Vocabulary::desk(), label_graph());
  std::vector<LabelSegment> segs;
  for (const auto& s : r.scene.segments) {
    LabelSegment ls{s.id, {}};
    for (const auto& p : s.points) ls.points.push_back(p.position);
    segs.push_back(std::move(ls));
  }
  std::vector<IdPair> edges;
  for (const auto& [e, _] : r.labels.edge_labels) edges.push_back(e);
  const auto a = generate_labels(segs, edges, g.truth, Vocabulary::desk());
  std::shuffle(segs.begin(), segs.end(), rng);
  const auto b = generate_labels(segs, edges, g.truth, Vocabulary::desk());
  CHECK(a.node_labels == b.node_labels);
  CHECK(a.edge_labels == b.edge_labels);
  CHECK(a.node_labels == r.labels.node_labels);
}

TEST_CASE("perfect same-part components recover every instance") {
  std::mt19937_64 rng(6);
  const auto g = generate_scene(random_room(rng), rng);
  GraphConfig graph = label_graph();
  const auto r = reconstruct(g.frames, g.truth, Vocabulary::desk(), graph);
  // union matched segments over same-part labels and compare with their instance ids
  std::map<SegmentId, SegmentId> parent;
  std::function<SegmentId(SegmentId)> find = [&](SegmentId x) { return parent[x] == x ? x : parent[x] = find(parent[x]); };
  for (const auto& [id, _] : r.labels.matches) parent[id] = id;
  for (const auto& [e, p] : r.labels.edge_labels)
    if (p == kSamePartPredicate) parent[find(e.first)] = find(e.second);
  for (const auto& [a, ma] : r.labels.matches)
    for (const auto& [b, mb] : r.labels.matches) {
      if (ma.instance < 0 || mb.instance < 0) continue;
      if (find(a) == find(b)) CHECK(ma.instance == mb.instance);
    }
}

TEST_CASE("random rooms are valid and reproducible") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 a(seed), b(seed);
    const auto sa = random_room(a), sb = random_room(b);
    CHECK_NOTHROW(sa.validate(Vocabulary::desk()));
    const auto ga = generate_scene(sa, a), gb = generate_scene(sb, b);
    CHECK(format_frame_line(ga.frames.back()) == format_frame_line(gb.frames.back()));
    CHECK(ga.truth.points.size() == gb.truth.points.size());
  }
  std::mt19937_64 rng(9);
  const auto dense = dense_scene(500, rng);
  std::size_t segments = 0;
  for (const auto& o : dense.objects) segments += static_cast<std::size_t>(o.segments);
  CHECK(segments >= 450);
}

TEST_CASE("ground truth file round trip") {
  std::mt19937_64 rng(7);
  const auto g = generate_scene(random_room(rng), rng);
  const auto path = (std::filesystem::temp_directory_path() / "sgf_gt.json").string();
  write_ground_truth(path, g.truth);
  const auto back = read_ground_truth(path);
  CHECK(back.points.size() == g.truth.points.size());
  CHECK(back.instance == g.truth.instance);
  CHECK(back.label == g.truth.label);
  CHECK(back.instance_label == g.truth.instance_label);
  CHECK(back.relations.size() == g.truth.relations.size());
  CHECK(back.stuff == g.truth.stuff);
  for (std::size_t i = 0; i < back.points.size(); ++i) CHECK(back.points[i] == g.truth.points[i]);
  std::filesystem::remove(path);
}

TEST_CASE("stream lines round trip and report bad lines") {
  FrameUpdate f;
  f.frame = 3;
  Point p;
  p.position = Vec3(0.1, 1.0 / 3.0, -2);
  p.normal = Vec3(0, 1, 0);
  p.color = Vec3(0.25, 0.5, 1);
  f.additions[12] = {p, p};
  f.merges = {{4, 12}};
  f.removals = {7};
  const auto back = parse_frame_line(format_frame_line(f));
  CHECK(back.frame == 3);
  CHECK(back.additions.at(12)[0].position == p.position);
  CHECK(back.additions.at(12)[1].color == p.color);
  CHECK(back.merges == f.merges);
  CHECK(back.removals == f.removals);
  CHECK(parse_frame_line("{\"frame\": 0}").additions.empty());

  std::istringstream in(format_frame_line(f) + "\n{\"frame\": 4, \"segments\": {\"1\": [[1, 2]]}}\n");
  try {
    read_stream(in);
    FAIL("expected a data error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  std::istringstream garbage("{\"frame\": 0}\nnot json\n");
  CHECK_THROWS_AS(read_stream(garbage), DataError);
}

TEST_CASE("grid nearest neighbor equals brute force") {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<Vec3> pts;
  for (int i = 0; i < 400; ++i) pts.emplace_back(u(rng), u(rng), u(rng));
  pts.push_back(pts[10]);  // duplicate: lower index wins
  const PointGrid grid(pts, 0.1);
  CHECK(grid.nearest(pts[10]) == 10);
  for (int t = 0; t < 300; ++t) {
    const Vec3 q(1.5 * u(rng), 1.5 * u(rng), 1.5 * u(rng));
    int best = -1;
    double bd = 1e300;
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const double d = (pts[i] - q).norm();
      if (d < bd) {
        bd = d;
        best = static_cast<int>(i);
      }
    }
    CHECK(grid.nearest(q) == best);
    CHECK(grid.nearest(q, 0.05) == (bd <= 0.05 ? best : -1));
  }
  const std::vector<Vec3> empty;
  CHECK(PointGrid(empty, 0.1).nearest(Vec3::Zero()) == -1);
}
