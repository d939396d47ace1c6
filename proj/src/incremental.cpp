#include "sgf/incremental.hpp"

#include <chrono>

namespace sgf {

namespace {

double elapsed_ms(std::chrono::steady_clock::time_point since) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - since).count();
}

}  // namespace

IncrementalPredictor::IncrementalPredictor(SpnParameters params)
    : params_(std::move(params)), cache_(params_.config.layers) {
  params_.validate();
}

void IncrementalPredictor::remove_node(SegmentId id) {
  auto it = adjacency_.find(id);
  if (it == adjacency_.end()) return;
  for (SegmentId n : it->second) {
    adjacency_[n].erase(id);
    pending_.insert(n);
    cache_.erase_edge({id, n});
    cache_.erase_edge({n, id});
  }
  adjacency_.erase(it);
  nodes_.erase(id);
  cache_.erase_node(id);
  pending_.erase(id);
}

void IncrementalPredictor::upsert_node(const NodeSnapshot& node) {
  NodeInput in;
  in.snapshot = node;
  in.points = normalize_points(node.points, node.properties.centroid, params_.config.input_channels);
  in.descriptor = node_descriptor(node.properties);
  nodes_[node.id] = std::move(in);
  adjacency_.try_emplace(node.id);
  pending_.insert(node.id);
}

void IncrementalPredictor::set_edge(SegmentId a, SegmentId b, bool present) {
  if (a == b) throw DataError("self-edge on segment " + std::to_string(a));
  if (!nodes_.contains(a) || !nodes_.contains(b)) throw DataError("edge references unknown node");
  const bool have = adjacency_[a].contains(b);
  if (have == present) return;
  if (present) {
    adjacency_[a].insert(b);
    adjacency_[b].insert(a);
  } else {
    adjacency_[a].erase(b);
    adjacency_[b].erase(a);
    cache_.erase_edge({a, b});
    cache_.erase_edge({b, a});
  }
  pending_.insert(a);
  pending_.insert(b);
}

std::vector<SegmentId> IncrementalPredictor::node_ids() const {
  std::vector<SegmentId> ids;
  for (const auto& [id, _] : nodes_) ids.push_back(id);
  return ids;
}

std::vector<IdPair> IncrementalPredictor::directed_edges() const {
  std::vector<IdPair> out;
  for (const auto& [a, nbrs] : adjacency_)
    for (SegmentId b : nbrs) out.emplace_back(a, b);
  return out;
}

void IncrementalPredictor::compute_layer0(const RecomputePlan& plan) {
  const auto& c = params_.config;
  auto t0 = std::chrono::steady_clock::now();
  const auto& nodes = plan.nodes[0];
  if (!nodes.empty()) {
    std::vector<Mat> sets;
    Mat desc(static_cast<Eigen::Index>(nodes.size()), kNodeDescriptorDim);
    Eigen::Index r = 0;
    for (SegmentId id : nodes) {
      const auto& in = nodes_.at(id);
      sets.push_back(in.points);
      desc.row(r++) = in.descriptor;
    }
    const Mat encoded = encode_point_sets(params_, sets);
    Mat raw(encoded.rows(), c.raw_node_dim());
    raw << encoded, desc;
    const Mat projected = params_.node_projection.forward(raw);
    r = 0;
    for (SegmentId id : nodes) cache_.set_node(id, 0, projected.row(r++));
  }
  counts_.nodes[0] = nodes.size();
  times_.node_feature = elapsed_ms(t0);

  t0 = std::chrono::steady_clock::now();
  const auto& edges = plan.edges[0];
  if (!edges.empty()) {
    Mat desc(static_cast<Eigen::Index>(edges.size()), kEdgeDescriptorDim);
    Eigen::Index r = 0;
    for (const auto& [a, b] : edges)
      desc.row(r++) = edge_descriptor(nodes_.at(a).snapshot.properties, nodes_.at(b).snapshot.properties);
    const Mat encoded = params_.edge_encoder.forward(desc);
    r = 0;
    for (const auto& e : edges) cache_.set_edge(e, 0, encoded.row(r++));
  }
  counts_.edges[0] = edges.size();
  times_.edge_feature = elapsed_ms(t0);
}

void IncrementalPredictor::compute_gnn_layer(const RecomputePlan& plan, int layer) {
  const auto& c = params_.config;
  const auto& g = params_.gnn[static_cast<std::size_t>(layer - 1)];
  const bool final_layer = layer == c.layers;
  const int prev = layer - 1;
  auto t0 = std::chrono::steady_clock::now();

  const auto& nodes = plan.nodes[static_cast<std::size_t>(layer)];
  if (!nodes.empty()) {
    std::vector<std::pair<SegmentId, SegmentId>> outgoing;
    std::vector<int> group;
    int local = 0;
    for (SegmentId i : nodes) {
      for (SegmentId j : adjacency_.at(i)) {
        outgoing.emplace_back(i, j);
        group.push_back(local);
      }
      ++local;
    }
    Mat self(static_cast<Eigen::Index>(nodes.size()), c.node_dim);
    Eigen::Index r = 0;
    for (SegmentId i : nodes) self.row(r++) = cache_.node(i, prev);

    Mat aggregated = Mat::Zero(self.rows(), c.target_dim);
    if (!outgoing.empty()) {
      const auto m = static_cast<Eigen::Index>(outgoing.size());
      Mat src(m, c.node_dim), edge(m, c.edge_dim), dst(m, c.node_dim);
      for (Eigen::Index k = 0; k < m; ++k) {
        const auto& [i, j] = outgoing[static_cast<std::size_t>(k)];
        src.row(k) = cache_.node(i, prev);
        edge.row(k) = cache_.edge({i, j}, prev);
        dst.row(k) = cache_.node(j, prev);
      }
      aggregated = max_aggregate(fan(g, c.heads, src, edge, dst), group, local);
    }
    counts_.messages += outgoing.size();
    Mat input(self.rows(), c.node_dim + c.target_dim);
    input << self, aggregated;
    Mat updated = g.node_update.forward(input);
    if (!final_layer) updated = relu(updated);
    r = 0;
    for (SegmentId i : nodes) cache_.set_node(i, layer, updated.row(r++));
  }
  counts_.nodes[static_cast<std::size_t>(layer)] = nodes.size();

  const auto& edges = plan.edges[static_cast<std::size_t>(layer)];
  if (!edges.empty()) {
    const auto m = static_cast<Eigen::Index>(edges.size());
    Mat input(m, 2 * c.node_dim + c.edge_dim);
    Eigen::Index k = 0;
    for (const auto& e : edges) {
      input.row(k) << cache_.node(e.first, prev), cache_.edge(e, prev), cache_.node(e.second, prev);
      ++k;
    }
    Mat updated = g.edge_update.forward(input);
    if (!final_layer) updated = relu(updated);
    k = 0;
    for (const auto& e : edges) cache_.set_edge(e, layer, updated.row(k++));
  }
  counts_.edges[static_cast<std::size_t>(layer)] = edges.size();
  times_.gnn[static_cast<std::size_t>(layer - 1)] = elapsed_ms(t0);
}

void IncrementalPredictor::compute_logits(const RecomputePlan& plan) {
  const int L = params_.config.layers;
  auto t0 = std::chrono::steady_clock::now();
  const auto& nodes = plan.nodes[static_cast<std::size_t>(L)];
  if (!nodes.empty()) {
    Mat feats(static_cast<Eigen::Index>(nodes.size()), params_.config.node_dim);
    Eigen::Index r = 0;
    for (SegmentId i : nodes) feats.row(r++) = cache_.node(i, L);
    const Mat logits = params_.node_classifier.forward(feats);
    require_finite(logits, "node logits");
    r = 0;
    for (SegmentId i : nodes) cache_.set_node_logits(i, logits.row(r++));
  }
  const auto& edges = plan.edges[static_cast<std::size_t>(L)];
  if (!edges.empty()) {
    Mat feats(static_cast<Eigen::Index>(edges.size()), params_.config.edge_dim);
    Eigen::Index r = 0;
    for (const auto& e : edges) feats.row(r++) = cache_.edge(e, L);
    const Mat logits = params_.predicate_classifier.forward(feats);
    require_finite(logits, "edge logits");
    r = 0;
    for (const auto& e : edges) cache_.set_edge_logits(e, logits.row(r++));
  }
  counts_.node_classifications = nodes.size();
  counts_.edge_classifications = edges.size();
  times_.classify = elapsed_ms(t0);
}

RecomputePlan IncrementalPredictor::refresh() {
  const int L = params_.config.layers;
  RecomputePlan plan = mark_dirty_and_plan(adjacency_, pending_, L);
  pending_.clear();
  counts_ = RecomputeCounts{};
  counts_.nodes.assign(static_cast<std::size_t>(L) + 1, 0);
  counts_.edges.assign(static_cast<std::size_t>(L) + 1, 0);
  times_ = StageTimes{};
  times_.gnn.assign(static_cast<std::size_t>(L), 0.0);
  cache_.mark_dirty(plan);
  compute_layer0(plan);
  for (int l = 1; l <= L; ++l) compute_gnn_layer(plan, l);
  compute_logits(plan);
  plan_ = plan;
  return plan;
}

Prediction IncrementalPredictor::predict(const SubgraphSnapshot& snapshot, std::span<const SegmentId> removed) {
  for (SegmentId id : removed) remove_node(id);

  const std::set<SegmentId> flagged(snapshot.flagged.begin(), snapshot.flagged.end());
  std::set<SegmentId> included;
  for (const auto& node : snapshot.nodes) {
    included.insert(node.id);
    if (flagged.contains(node.id) || !nodes_.contains(node.id)) upsert_node(node);
  }
  const std::set<IdPair> wanted(snapshot.edges.begin(), snapshot.edges.end());
  for (SegmentId a : included) {
    std::vector<SegmentId> drop;
    for (SegmentId b : adjacency_.at(a))
      if (a < b && included.contains(b) && !wanted.contains({a, b})) drop.push_back(b);
    for (SegmentId b : drop) set_edge(a, b, false);
  }
  for (const auto& [a, b] : snapshot.edges) set_edge(a, b, true);

  refresh();

  Prediction p;
  p.frame = snapshot.frame;
  const auto C = params_.config.num_classes;
  p.node_probabilities.resize(static_cast<Eigen::Index>(included.size()), C);
  Eigen::Index r = 0;
  for (SegmentId id : included) {
    p.node_ids.push_back(id);
    const auto& snap = nodes_.at(id).snapshot;
    p.node_sizes.push_back(snap.point_count);
    p.node_properties.push_back(snap.properties);
    p.node_probabilities.row(r++) = softmax_rows(cache_.node_logits(id));
  }
  for (SegmentId a : included)
    for (SegmentId b : adjacency_.at(a))
      if (included.contains(b)) p.edges.emplace_back(a, b);
  p.edge_probabilities.resize(static_cast<Eigen::Index>(p.edges.size()), params_.config.num_predicates);
  r = 0;
  for (const auto& e : p.edges) p.edge_probabilities.row(r++) = softmax_rows(cache_.edge_logits(e));
  return p;
}

ForwardResult IncrementalPredictor::full_forward() const {
  std::vector<NodeSnapshot> nodes;
  for (const auto& [_, in] : nodes_) nodes.push_back(in.snapshot);
  const auto edges = directed_edges();
  return forward(build_graph_input(nodes, edges, params_.config.input_channels), params_);
}

}  // namespace sgf
