#include "sgf/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

namespace sgf {

int FusedDistribution::argmax() const {
  Eigen::Index i = 0;
  probabilities.maxCoeff(&i);
  return static_cast<int>(i);
}

namespace {

void check_normalized(const Eigen::VectorXd& p, const char* what) {
  if (p.size() == 0) throw DataError(std::string(what) + " distribution is empty");
  if (!p.allFinite() || (p.array() < 0.0).any() || std::abs(p.sum() - 1.0) > kNormalizationTolerance)
    throw DataError(std::string(what) + " distribution is not normalized");
}

}  // namespace

FusedDistribution fuse(const FusedDistribution& stored, const Eigen::VectorXd& incoming, double incoming_weight,
                       double max_weight) {
  check_normalized(incoming, "incoming");
  if (!(incoming_weight > 0.0)) throw DataError("fuse: incoming weight must be positive");
  FusedDistribution out;
  if (stored.weight <= 0.0) {
    out.probabilities = incoming / incoming.sum();
    out.weight = std::min(max_weight, incoming_weight);
    return out;
  }
  check_normalized(stored.probabilities, "stored");
  if (stored.probabilities.size() != incoming.size()) throw DataError("fuse: vocabulary size mismatch");
  out.probabilities = (incoming * incoming_weight + stored.probabilities * stored.weight) /
                      (incoming_weight + stored.weight);
  out.probabilities /= out.probabilities.sum();
  out.weight = std::min(max_weight, incoming_weight + stored.weight);
  return out;
}

FusedSceneGraph::FusedSceneGraph(int same_part_predicate, double max_weight)
    : same_part_(same_part_predicate), max_weight_(max_weight) {}

void FusedSceneGraph::apply_prediction(const Prediction& p) {
  for (std::size_t k = 0; k < p.node_ids.size(); ++k) {
    const SegmentId id = p.node_ids[k];
    if (retired_.contains(id)) {
      ++skipped_;
      continue;
    }
    FusedNode& n = nodes_[id];
    n.classes = fuse(n.classes, p.node_probabilities.row(static_cast<Eigen::Index>(k)).transpose(), 1.0, max_weight_);
    if (k < p.node_sizes.size()) n.size = p.node_sizes[k];
    if (k < p.node_properties.size()) n.properties = p.node_properties[k];
  }
  for (std::size_t k = 0; k < p.edges.size(); ++k) {
    const auto& e = p.edges[k];
    if (retired_.contains(e.first) || retired_.contains(e.second)) {
      ++skipped_;
      continue;
    }
    FusedDistribution& d = edges_[e];
    d = fuse(d, p.edge_probabilities.row(static_cast<Eigen::Index>(k)).transpose(), 1.0, max_weight_);
  }
  ++applied_;
}

void FusedSceneGraph::remove_segment(SegmentId id) {
  retired_.insert(id);
  nodes_.erase(id);
  std::erase_if(edges_, [id](const auto& kv) { return kv.first.first == id || kv.first.second == id; });
}

std::map<SegmentId, SegmentId> FusedSceneGraph::instance_of() const {
  std::map<SegmentId, SegmentId> parent;
  for (const auto& [id, _] : nodes_) parent[id] = id;
  auto find = [&](SegmentId x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  for (const auto& [e, d] : edges_) {
    if (e.first >= e.second) continue;
    if (!nodes_.contains(e.first) || !nodes_.contains(e.second)) continue;
    auto back = edges_.find({e.second, e.first});
    if (back == edges_.end()) continue;
    if (d.argmax() != same_part_ || back->second.argmax() != same_part_) continue;
    const SegmentId a = find(e.first);
    const SegmentId b = find(e.second);
    if (a != b) parent[std::max(a, b)] = std::min(a, b);
  }
  std::map<SegmentId, SegmentId> out;
  for (const auto& [id, _] : nodes_) out[id] = find(id);
  return out;
}

std::vector<Instance> FusedSceneGraph::cluster_instances() const {
  std::map<SegmentId, Instance> by_root;
  for (const auto& [id, root] : instance_of()) {
    Instance& inst = by_root[root];
    inst.id = root;
    inst.members.push_back(id);
  }
  std::vector<Instance> out;
  for (auto& [_, inst] : by_root) {
    std::map<int, double> votes;
    for (SegmentId m : inst.members) {
      const FusedNode& n = nodes_.at(m);
      votes[n.classes.argmax()] += static_cast<double>(std::max<std::size_t>(n.size, 1));
    }
    double best = -1.0;
    for (const auto& [label, v] : votes)
      if (v > best) {
        best = v;
        inst.label = label;
      }
    out.push_back(std::move(inst));
  }
  return out;
}

namespace {

void put_double(std::string& out, double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v == 0.0 ? 0.0 : v);
  out += buf;
}

void put_vector(std::string& out, const double* v, Eigen::Index n) {
  out += '[';
  for (Eigen::Index i = 0; i < n; ++i) {
    if (i) out += ", ";
    put_double(out, v[i]);
  }
  out += ']';
}

std::string quoted(const std::string& s) { return nlohmann::json(s).dump(); }

std::string name_of(const std::vector<std::string>& names, int i) {
  return i >= 0 && i < static_cast<int>(names.size()) ? names[static_cast<std::size_t>(i)] : std::to_string(i);
}

Eigen::VectorXd read_vector(const nlohmann::json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = j[i].get<double>();
  return v;
}

Vec3 read_vec3(const nlohmann::json& j) {
  if (j.size() != 3) throw DataError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

std::string export_graph(const FusedSceneGraph& graph, const std::vector<std::string>& class_names,
                         const std::vector<std::string>& predicate_names) {
  const auto instance = graph.instance_of();
  std::string out;
  out += "{\n  \"schema_version\": " + std::to_string(kGraphSchemaVersion) + ",\n";
  out += "  \"same_part_predicate\": " + std::to_string(graph.same_part_predicate()) + ",\n";
  out += "  \"nodes\": [";
  bool first = true;
  for (const auto& [id, n] : graph.nodes()) {
    out += first ? "\n" : ",\n";
    first = false;
    const int label = n.classes.argmax();
    out += "    {\"id\": " + std::to_string(id) + ", \"argmax\": " + std::to_string(label) +
           ", \"label\": " + quoted(name_of(class_names, label)) + ", \"instance\": " + std::to_string(instance.at(id)) +
           ", \"weight\": ";
    put_double(out, n.classes.weight);
    out += ", \"size\": " + std::to_string(n.size) + ", \"distribution\": ";
    put_vector(out, n.classes.probabilities.data(), n.classes.probabilities.size());
    out += ", \"properties\": {\"centroid\": ";
    put_vector(out, n.properties.centroid.data(), 3);
    out += ", \"std\": ";
    put_vector(out, n.properties.std.data(), 3);
    out += ", \"bbox\": ";
    put_vector(out, n.properties.bbox.data(), 3);
    out += ", \"length\": ";
    put_double(out, n.properties.length);
    out += ", \"volume\": ";
    put_double(out, n.properties.volume);
    out += "}}";
  }
  out += first ? "],\n" : "\n  ],\n";
  out += "  \"edges\": [";
  first = true;
  for (const auto& [e, d] : graph.edges()) {
    out += first ? "\n" : ",\n";
    first = false;
    const int label = d.argmax();
    out += "    {\"source\": " + std::to_string(e.first) + ", \"target\": " + std::to_string(e.second) +
           ", \"argmax\": " + std::to_string(label) + ", \"predicate\": " + quoted(name_of(predicate_names, label)) +
           ", \"weight\": ";
    put_double(out, d.weight);
    out += ", \"distribution\": ";
    put_vector(out, d.probabilities.data(), d.probabilities.size());
    out += "}";
  }
  out += first ? "],\n" : "\n  ],\n";
  out += "  \"instances\": [";
  first = true;
  for (const auto& inst : graph.cluster_instances()) {
    out += first ? "\n" : ",\n";
    first = false;
    out += "    {\"id\": " + std::to_string(inst.id) + ", \"argmax\": " + std::to_string(inst.label) +
           ", \"label\": " + quoted(name_of(class_names, inst.label)) + ", \"members\": [";
    for (std::size_t i = 0; i < inst.members.size(); ++i) {
      if (i) out += ", ";
      out += std::to_string(inst.members[i]);
    }
    out += "]}";
  }
  out += first ? "]\n}\n" : "\n  ]\n}\n";
  return out;
}

void export_graph_file(const std::string& path, const FusedSceneGraph& graph,
                       const std::vector<std::string>& class_names, const std::vector<std::string>& predicate_names) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << export_graph(graph, class_names, predicate_names);
}

FusedSceneGraph parse_graph(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    if (j.at("schema_version").get<int>() != kGraphSchemaVersion) throw DataError("unsupported schema_version");
    FusedSceneGraph g(j.value("same_part_predicate", 1));
    for (const auto& n : j.at("nodes")) {
      FusedNode node;
      node.classes.probabilities = read_vector(n.at("distribution"));
      node.classes.weight = n.at("weight").get<double>();
      node.size = n.at("size").get<std::size_t>();
      const auto& p = n.at("properties");
      node.properties.centroid = read_vec3(p.at("centroid"));
      node.properties.std = read_vec3(p.at("std"));
      node.properties.bbox = read_vec3(p.at("bbox"));
      node.properties.length = p.at("length").get<double>();
      node.properties.volume = p.at("volume").get<double>();
      g.set_node(n.at("id").get<SegmentId>(), std::move(node));
    }
    for (const auto& e : j.at("edges")) {
      FusedDistribution d;
      d.probabilities = read_vector(e.at("distribution"));
      d.weight = e.at("weight").get<double>();
      g.set_edge({e.at("source").get<SegmentId>(), e.at("target").get<SegmentId>()}, std::move(d));
    }
    return g;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("malformed scene graph: ") + e.what());
  }
}

}  // namespace sgf
