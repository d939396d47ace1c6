#include "sgf/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "sgf/point_grid.hpp"

namespace sgf {

using nlohmann::json;

int Vocabulary::class_index(const std::string& name) const {
  auto it = std::find(classes.begin(), classes.end(), name);
  return it == classes.end() ? -1 : static_cast<int>(it - classes.begin());
}

int Vocabulary::predicate_index(const std::string& name) const {
  auto it = std::find(predicates.begin(), predicates.end(), name);
  return it == predicates.end() ? -1 : static_cast<int>(it - predicates.begin());
}

Vocabulary Vocabulary::desk() {
  return {{"floor", "wall", "table", "chair", "box"}, {"none", "same part", "standing on", "attached to"}, {0, 1}};
}

Vocabulary Vocabulary::full() {
  Vocabulary v = desk();
  v.predicates = {"none",        "same part",  "standing on",  "attached to",
                  "supported by", "hanging on", "connected to", "build in"};
  return v;
}

void SceneSpec::validate(const Vocabulary& vocab) const {
  if (frames < 1) throw ConfigError("scene: frames must be >= 1");
  if (!(noise >= 0.0)) throw ConfigError("scene: noise must be non-negative");
  const int n = static_cast<int>(objects.size());
  for (int i = 0; i < n; ++i) {
    const auto& o = objects[static_cast<std::size_t>(i)];
    const std::string where = "scene object " + std::to_string(i);
    if (vocab.class_index(o.label) < 0) throw ConfigError(where + ": unknown class '" + o.label + "'");
    if (o.segments < 1) throw ConfigError(where + ": segments must be >= 1");
    if (o.points < static_cast<std::size_t>(o.segments)) throw ConfigError(where + ": fewer points than segments");
    if (!o.size.allFinite() || (o.size.array() < 0.0).any()) throw ConfigError(where + ": bad size");
    if (o.support >= n || o.support == i || o.support < -1) throw ConfigError(where + ": bad support index");
    int hops = 0;
    for (int s = o.support; s >= 0; s = objects[static_cast<std::size_t>(s)].support)
      if (++hops > n) throw ConfigError(where + ": support cycle");
  }
  for (const auto& m : merges) {
    if (m.object < 0 || m.object >= n) throw ConfigError("scene merge: bad object index");
    if (m.frame < 0 || m.frame >= frames) throw ConfigError("scene merge: frame outside the stream");
  }
}

namespace {

double uniform(std::mt19937_64& rng, double a, double b) { return std::uniform_real_distribution<double>(a, b)(rng); }

struct Footprint {
  double x, y, r;
};

bool place(std::mt19937_64& rng, std::vector<Footprint>& taken, double r, double lo, double hi, double& x,
           double& y) {
  for (int attempt = 0; attempt < 200; ++attempt) {
    x = uniform(rng, lo + r, hi - r);
    y = uniform(rng, lo + r, hi - r);
    bool free = true;
    for (const auto& f : taken) free = free && std::hypot(f.x - x, f.y - y) > f.r + r + 0.15;
    if (free) {
      taken.push_back({x, y, r});
      return true;
    }
  }
  return false;
}

}  // namespace

SceneSpec random_room(std::mt19937_64& rng, const RoomOptions& options) {
  SceneSpec layout;
  layout.frames = options.frames;
  auto pts = [&](double n) { return static_cast<std::size_t>(std::max(8.0, std::round(n * options.point_scale))); };
  const double room = 4.0;

  ObjectSpec floor{"floor", Shape::HorizontalPlane, {room / 2, room / 2, 0.0}, {room, room, 0.0}, 0.0, -1,
                   "", 2, pts(1200)};
  layout.objects.push_back(floor);
  const int walls = std::uniform_int_distribution<int>(1, 2)(rng);
  for (int w = 0; w < walls; ++w) {
    ObjectSpec wall{"wall", Shape::VerticalPlane, w == 0 ? Vec3{room / 2, 0.0, 0.0} : Vec3{0.0, room / 2, 0.0},
                    {room, 2.5, 0.0}, w == 0 ? 0.0 : std::numbers::pi / 2, 0, "attached to",
                    std::uniform_int_distribution<int>(1, 2)(rng), pts(800)};
    layout.objects.push_back(wall);
  }

  std::vector<Footprint> taken;
  std::vector<int> tables;
  const int n_tables = std::uniform_int_distribution<int>(1, options.max_tables)(rng);
  for (int t = 0; t < n_tables; ++t) {
    const Vec3 size{uniform(rng, 1.0, 1.4), uniform(rng, 0.6, 0.8), uniform(rng, 0.7, 0.8)};
    double x = 0, y = 0;
    if (!place(rng, taken, 0.5 * std::hypot(size.x(), size.y()), 0.3, room - 0.1, x, y)) continue;
    tables.push_back(static_cast<int>(layout.objects.size()));
    layout.objects.push_back({"table", Shape::Box, {x, y, 0.0}, size, uniform(rng, 0.0, std::numbers::pi), 0,
                            "standing on", 3, pts(900)});
  }
  const int n_chairs = std::uniform_int_distribution<int>(1, options.max_chairs)(rng);
  for (int c = 0; c < n_chairs; ++c) {
    const Vec3 size{uniform(rng, 0.4, 0.5), uniform(rng, 0.4, 0.5), uniform(rng, 0.85, 1.0)};
    double x = 0, y = 0;
    if (!place(rng, taken, 0.5 * std::hypot(size.x(), size.y()), 0.3, room - 0.1, x, y)) continue;
    layout.objects.push_back({"chair", Shape::Box, {x, y, 0.0}, size, uniform(rng, 0.0, std::numbers::pi), 0,
                            "standing on", 2, pts(500)});
  }
  const int n_boxes = std::uniform_int_distribution<int>(1, options.max_boxes)(rng);
  for (int b = 0; b < n_boxes; ++b) {
    const bool cylinder = std::bernoulli_distribution(0.5)(rng);
    const double side = uniform(rng, 0.2, 0.35);
    const Vec3 size{side, cylinder ? side : uniform(rng, 0.2, 0.35), uniform(rng, 0.2, 0.4)};
    ObjectSpec box{"box", cylinder ? Shape::Cylinder : Shape::Box, Vec3::Zero(), size,
                   uniform(rng, 0.0, std::numbers::pi), 0, "standing on", 1, pts(250)};
    if (!tables.empty() && std::bernoulli_distribution(0.5)(rng)) {
      const int t = tables[std::uniform_int_distribution<std::size_t>(0, tables.size() - 1)(rng)];
      const auto& table = layout.objects[static_cast<std::size_t>(t)];
      const double u = uniform(rng, -0.25, 0.25) * table.size.x();
      const double v = uniform(rng, -0.25, 0.25) * table.size.y();
      const double c = std::cos(table.yaw), s = std::sin(table.yaw);
      box.center = {table.center.x() + c * u - s * v, table.center.y() + s * u + c * v, table.size.z()};
      box.support = t;
    } else {
      double x = 0, y = 0;
      if (!place(rng, taken, 0.5 * std::hypot(size.x(), size.y()), 0.3, room - 0.1, x, y)) continue;
      box.center = {x, y, 0.0};
    }
    layout.objects.push_back(box);
  }
  if (layout.objects.size() > 1 + static_cast<std::size_t>(walls) &&
      std::bernoulli_distribution(options.merge_probability)(rng) && options.frames > 2) {
    const int first = 1 + walls;
    layout.merges.push_back(
        {std::uniform_int_distribution<int>(first, static_cast<int>(layout.objects.size()) - 1)(rng),
         std::uniform_int_distribution<FrameIndex>(2, options.frames - 1)(rng)});
  }
  return layout;
}

SceneSpec dense_scene(int segments, std::mt19937_64& rng, int frames) {
  if (segments < 6) throw ConfigError("dense_scene: at least 6 segments");
  SceneSpec layout;
  layout.frames = frames;
  const int objects = (segments - 4) / 2;
  const int side = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(objects))));
  const double pitch = 0.9;
  const double extent = pitch * side + 0.4;
  layout.objects.push_back({"floor", Shape::HorizontalPlane, {extent / 2, extent / 2, 0.0}, {extent, extent, 0.0}, 0.0,
                          -1, "", 4 + (segments - 4) % 2, static_cast<std::size_t>(100 * (4 + (segments - 4) % 2))});
  static const char* kinds[] = {"table", "chair", "box"};
  for (int i = 0; i < objects; ++i) {
    const std::string label = kinds[i % 3];
    Vec3 size = label == "table"   ? Vec3{uniform(rng, 0.6, 0.7), uniform(rng, 0.4, 0.5), 0.75}
                : label == "chair" ? Vec3{0.45, 0.45, uniform(rng, 0.85, 1.0)}
                                   : Vec3{0.3, 0.3, uniform(rng, 0.2, 0.4)};
    const Vec3 center{0.2 + pitch * (i % side + 0.5), 0.2 + pitch * (i / side + 0.5), 0.0};
    layout.objects.push_back({label, Shape::Box, center, size, uniform(rng, 0.0, std::numbers::pi), 0, "standing on", 2,
                            200});
  }
  return layout;
}

namespace {

struct SurfacePoint {
  Vec3 local;
  Vec3 normal;
};

SurfacePoint sample_surface(const ObjectSpec& o, std::mt19937_64& rng) {
  const Vec3 s = o.size;
  switch (o.shape) {
    case Shape::HorizontalPlane:
      return {{uniform(rng, -s.x() / 2, s.x() / 2), uniform(rng, -s.y() / 2, s.y() / 2), 0.0}, Vec3::UnitZ()};
    case Shape::VerticalPlane:
      return {{uniform(rng, -s.x() / 2, s.x() / 2), 0.0, uniform(rng, 0.0, s.y())}, Vec3::UnitY()};
    case Shape::Cylinder: {
      const double r = s.x() / 2;
      const double side = 2 * std::numbers::pi * r * s.z();
      const double top = std::numbers::pi * r * r;
      if (uniform(rng, 0.0, side + top) < side) {
        const double a = uniform(rng, 0.0, 2 * std::numbers::pi);
        return {{r * std::cos(a), r * std::sin(a), uniform(rng, 0.0, s.z())}, {std::cos(a), std::sin(a), 0.0}};
      }
      const double a = uniform(rng, 0.0, 2 * std::numbers::pi);
      const double rr = r * std::sqrt(uniform(rng, 0.0, 1.0));
      return {{rr * std::cos(a), rr * std::sin(a), s.z()}, Vec3::UnitZ()};
    }
    case Shape::Box:
    default: {
      const double top = s.x() * s.y();
      const double sx = s.y() * s.z();
      const double sy = s.x() * s.z();
      double pick = uniform(rng, 0.0, top + 2 * sx + 2 * sy);
      const double u = uniform(rng, -0.5, 0.5);
      const double v = uniform(rng, -0.5, 0.5);
      if ((pick -= top) < 0) return {{u * s.x(), v * s.y(), s.z()}, Vec3::UnitZ()};
      const double z = (v + 0.5) * s.z();
      if ((pick -= sx) < 0) return {{s.x() / 2, u * s.y(), z}, Vec3::UnitX()};
      if ((pick -= sx) < 0) return {{-s.x() / 2, u * s.y(), z}, -Vec3::UnitX()};
      if ((pick -= sy) < 0) return {{u * s.x(), s.y() / 2, z}, Vec3::UnitY()};
      return {{u * s.x(), -s.y() / 2, z}, -Vec3::UnitY()};
    }
  }
}

Vec3 class_color(int label) {
  static const Vec3 palette[] = {{0.55, 0.45, 0.35}, {0.85, 0.85, 0.8}, {0.6, 0.35, 0.15},
                                 {0.2, 0.3, 0.6},    {0.8, 0.6, 0.2}};
  return palette[static_cast<std::size_t>(label) % std::size(palette)];
}

}  // namespace

GeneratedScene generate_scene(const SceneSpec& layout, std::mt19937_64& rng, const Vocabulary& vocab) {
  layout.validate(vocab);
  GeneratedScene out;
  GroundTruth& gt = out.truth;
  gt.classes = vocab.classes;
  gt.stuff = vocab.stuff;

  struct Emitted {
    Point point;
    SegmentId segment;
    int slab;
    int object;
  };
  std::vector<Emitted> emitted;
  std::normal_distribution<double> unit(0.0, 1.0);
  auto noise = [&](std::mt19937_64& g) { return layout.noise * unit(g); };
  SegmentId next_id = 1;
  std::vector<SegmentId> first_segment(layout.objects.size());

  for (std::size_t oi = 0; oi < layout.objects.size(); ++oi) {
    const auto& o = layout.objects[oi];
    const int instance = static_cast<int>(oi) + 1;
    const int label = vocab.class_index(o.label);
    gt.instance_label[instance] = label;
    if (o.support >= 0) gt.relations.push_back({instance, o.support + 1, o.relation});

    const double c = std::cos(o.yaw), s = std::sin(o.yaw);
    Eigen::Matrix3d rot;
    rot << c, -s, 0, s, c, 0, 0, 0, 1;
    std::vector<SurfacePoint> local(o.points);
    for (auto& p : local) p = sample_surface(o, rng);
    // Slabs of equal count along the longer local horizontal axis.
    const int axis = (o.shape == Shape::VerticalPlane || o.size.x() >= o.size.y()) ? 0 : 1;
    std::vector<std::size_t> order(local.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return local[a].local[axis] < local[b].local[axis]; });
    std::vector<int> slab(local.size());
    for (std::size_t r = 0; r < order.size(); ++r)
      slab[order[r]] = static_cast<int>(r * static_cast<std::size_t>(o.segments) / order.size());
    first_segment[oi] = next_id;
    const Vec3 color = class_color(label);
    for (std::size_t i = 0; i < local.size(); ++i) {
      const Vec3 world = rot * local[i].local + o.center;
      gt.points.push_back(world);
      gt.instance.push_back(instance);
      gt.label.push_back(label);
      Point p;
      p.position = world + Vec3{noise(rng), noise(rng), noise(rng)};
      p.normal = rot * local[i].normal;
      p.color = (color + Vec3::Constant(0.02 * unit(rng))).cwiseMax(0.0).cwiseMin(1.0);
      emitted.push_back({p, next_id + slab[i], slab[i], static_cast<int>(oi)});
    }
    next_id += o.segments;
  }

  // Reveal order: a sweep along x with jitter.
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin;
  for (const auto& e : emitted) {
    xmin = std::min(xmin, e.point.position.x());
    xmax = std::max(xmax, e.point.position.x());
  }
  const double width = std::max(xmax - xmin, 1e-9);
  std::vector<FrameIndex> reveal(emitted.size());
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    const double key = 0.75 * (emitted[i].point.position.x() - xmin) / width + 0.25 * uniform(rng, 0.0, 1.0);
    reveal[i] = std::min<FrameIndex>(layout.frames - 1, static_cast<FrameIndex>(key * layout.frames));
  }

  // Merge pieces: half of the first slab of an object streams under a temporary id.
  std::map<SegmentId, std::pair<SegmentId, FrameIndex>> piece_of;  // destination -> (piece, frame)
  std::vector<bool> in_piece(emitted.size(), false);
  for (const auto& m : layout.merges) {
    const SegmentId dst = first_segment[static_cast<std::size_t>(m.object)];
    if (piece_of.contains(dst)) continue;
    piece_of[dst] = {next_id++, m.frame};
  }
  for (std::size_t i = 0; i < emitted.size(); ++i) {
    auto it = piece_of.find(emitted[i].segment);
    if (it != piece_of.end() && reveal[i] < it->second.second && std::bernoulli_distribution(0.5)(rng))
      in_piece[i] = true;
  }

  out.frames.resize(static_cast<std::size_t>(layout.frames));
  std::set<SegmentId> live;
  std::map<SegmentId, FrameIndex> pending_merge;
  for (const auto& [dst, pf] : piece_of) pending_merge[dst] = pf.second;
  for (FrameIndex f = 0; f < layout.frames; ++f) {
    FrameUpdate& u = out.frames[static_cast<std::size_t>(f)];
    u.frame = f;
    for (std::size_t i = 0; i < emitted.size(); ++i) {
      if (reveal[i] != f) continue;
      SegmentId id = emitted[i].segment;
      if (in_piece[i]) id = piece_of.at(id).first;
      u.additions[id].push_back(emitted[i].point);
    }
    for (const auto& [id, _] : u.additions) live.insert(id);
    for (auto it = pending_merge.begin(); it != pending_merge.end();) {
      const SegmentId dst = it->first;
      const SegmentId piece = piece_of.at(dst).first;
      if (f >= it->second && live.contains(dst) && live.contains(piece)) {
        u.merges.emplace_back(piece, dst);
        live.erase(piece);
        it = pending_merge.erase(it);
      } else {
        ++it;
      }
    }
  }
  return out;
}

json ground_truth_to_json(const GroundTruth& gt) {
  json points = json::array();
  for (std::size_t i = 0; i < gt.points.size(); ++i)
    points.push_back({gt.points[i].x(), gt.points[i].y(), gt.points[i].z(), gt.instance[i], gt.label[i]});
  json instances = json::array();
  for (const auto& [id, label] : gt.instance_label) instances.push_back({{"id", id}, {"label", label}});
  json relations = json::array();
  for (const auto& r : gt.relations)
    relations.push_back({{"subject", r.subject}, {"object", r.object}, {"predicate", r.predicate}});
  return {{"format", "sgf-ground-truth"}, {"version", 1},
          {"classes", gt.classes},       {"stuff", gt.stuff},
          {"instances", instances},      {"relations", relations},
          {"points", points}};
}

GroundTruth ground_truth_from_json(const json& j) {
  try {
    if (j.at("format") != "sgf-ground-truth") throw DataError("not a ground-truth document");
    GroundTruth gt;
    gt.classes = j.at("classes").get<std::vector<std::string>>();
    gt.stuff = j.at("stuff").get<std::set<int>>();
    for (const auto& i : j.at("instances")) gt.instance_label[i.at("id").get<int>()] = i.at("label").get<int>();
    for (const auto& r : j.at("relations"))
      gt.relations.push_back({r.at("subject").get<int>(), r.at("object").get<int>(), r.at("predicate")});
    for (const auto& p : j.at("points")) {
      gt.points.emplace_back(p.at(0).get<double>(), p.at(1).get<double>(), p.at(2).get<double>());
      gt.instance.push_back(p.at(3).get<int>());
      gt.label.push_back(p.at(4).get<int>());
      if (!gt.instance_label.contains(gt.instance.back()))
        throw DataError("ground-truth point references unknown instance " + std::to_string(gt.instance.back()));
    }
    for (const auto& r : gt.relations)
      if (!gt.instance_label.contains(r.subject) || !gt.instance_label.contains(r.object))
        throw DataError("ground-truth relation references an unknown instance");
    return gt;
  } catch (const json::exception& e) {
    throw DataError(std::string("malformed ground truth: ") + e.what());
  }
}

void write_ground_truth(const std::string& path, const GroundTruth& gt) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << ground_truth_to_json(gt).dump() << '\n';
}

GroundTruth read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw DataError("malformed ground truth " + path + ": " + e.what());
  }
  return ground_truth_from_json(j);
}

std::map<SegmentId, SegmentMatch> match_segments(std::span<const LabelSegment> segments, const GroundTruth& gt) {
  const PointGrid grid(gt.points, kAssociationRadius);
  std::map<int, std::size_t> instance_size;
  for (int i : gt.instance) ++instance_size[i];

  std::map<SegmentId, SegmentMatch> out;
  for (const auto& seg : segments) {
    SegmentMatch m;
    std::map<int, std::set<int>> touched;
    for (const Vec3& p : seg.points) {
      const int nn = grid.nearest(p, kAssociationRadius);
      if (nn < 0) continue;
      const int inst = gt.instance[static_cast<std::size_t>(nn)];
      ++m.overlap[inst];
      touched[inst].insert(nn);
    }
    for (const auto& [inst, pts] : touched)
      m.coverage[inst] = static_cast<double>(pts.size()) / static_cast<double>(instance_size.at(inst));
    int best = -1;
    std::size_t best_count = 0;
    for (const auto& [inst, count] : m.overlap)
      if (count > best_count) {
        best = inst;
        best_count = count;
      }
    if (best >= 0 && !seg.points.empty()) {
      m.intersection = static_cast<double>(best_count) / static_cast<double>(seg.points.size());
      bool clean = m.intersection >= kMinIntersection;
      for (const auto& [inst, cov] : m.coverage)
        if (inst != best && cov > kMaxForeignCoverage) clean = false;
      if (clean) m.instance = best;
    }
    out[seg.id] = std::move(m);
  }
  return out;
}

Labels generate_labels(std::span<const LabelSegment> segments, std::span<const IdPair> directed_edges,
                       const GroundTruth& gt, const Vocabulary& vocab) {
  Labels l;
  l.matches = match_segments(segments, gt);
  for (const auto& [id, m] : l.matches) l.node_labels[id] = m.instance < 0 ? -1 : gt.instance_label.at(m.instance);
  std::map<std::pair<int, int>, int> relation;
  for (const auto& r : gt.relations) {
    const int p = vocab.predicate_index(r.predicate);
    if (p >= 0) relation[{r.subject, r.object}] = p;
  }
  for (const auto& [a, b] : directed_edges) {
    const int ia = l.matches.at(a).instance;
    const int ib = l.matches.at(b).instance;
    int label = kNonePredicate;
    if (ia >= 0 && ib >= 0) {
      if (ia == ib) {
        label = kSamePartPredicate;
      } else if (auto it = relation.find({ia, ib}); it != relation.end()) {
        label = it->second;
      }
    }
    l.edge_labels[{a, b}] = label;
  }
  return l;
}

ReconstructedScene reconstruct(std::span<const FrameUpdate> frames, const GroundTruth& gt, const Vocabulary& vocab,
                               const GraphConfig& graph) {
  ReconstructedScene r;
  for (const auto& f : frames) r.map.apply_frame(f);
  std::vector<LabelSegment> segs;
  std::vector<const Segment*> kept;
  for (const auto& [id, s] : r.map.segments()) {
    if (s.size() < graph.min_segment_points) continue;
    kept.push_back(&s);
    LabelSegment ls{id, {}};
    for (const auto& p : s.points) ls.points.push_back(p.position);
    segs.push_back(std::move(ls));
  }
  std::vector<IdPair> directed;
  for (std::size_t i = 0; i < kept.size(); ++i)
    for (std::size_t j = i + 1; j < kept.size(); ++j) {
      const auto& a = kept[i]->moments;
      const auto& b = kept[j]->moments;
      if (bbox_distance(a.min(), a.max(), b.min(), b.max()) > graph.proximity_threshold) continue;
      r.scene.edges.emplace_back(kept[i]->id, kept[j]->id);
      directed.emplace_back(kept[i]->id, kept[j]->id);
      directed.emplace_back(kept[j]->id, kept[i]->id);
    }
  r.labels = generate_labels(segs, directed, gt, vocab);
  for (const Segment* s : kept) r.scene.segments.push_back({s->id, s->points, r.labels.node_labels.at(s->id)});
  r.scene.edge_labels = r.labels.edge_labels;
  return r;
}

}  // namespace sgf
