#include "sgf/spn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>

namespace sgf {

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.node_dim = 512;
  c.edge_dim = 256;
  c.query_dim = 512;
  c.target_dim = 256;
  c.num_classes = 20;
  c.num_predicates = 8;
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (encoder_dims.empty()) fail("encoder_dims is empty");
  for (int d : encoder_dims)
    if (d <= 0) fail("encoder dims must be positive");
  if (input_channels != 3 && input_channels != 6 && input_channels != 9) fail("input_channels must be 3, 6 or 9");
  if (node_dim <= 0 || edge_dim <= 0 || query_dim <= 0 || target_dim <= 0) fail("dims must be positive");
  if (heads <= 0) fail("heads must be positive");
  if (query_dim % 2 != 0) fail("query_dim must be even");
  if (query_dim % heads != 0) fail("query_dim must be divisible by heads");
  if (target_dim % heads != 0) fail("target_dim must be divisible by heads");
  if (layers < 1) fail("layers must be >= 1");
  if (num_classes < 1 || num_predicates < 1) fail("class counts must be positive");
}

Mat Linear::forward(const Mat& x) const {
  Mat y = x * weight;
  y.rowwise() += bias.row(0);
  return y;
}

Mat Mlp::forward(const Mat& x) const {
  Mat h = layers.front().forward(x);
  for (std::size_t i = 1; i < layers.size(); ++i) h = layers[i].forward(relu(h));
  return h;
}

namespace {

Linear make_linear(int in, int out, std::mt19937_64* rng) {
  Linear l;
  l.weight = Mat::Zero(in, out);
  l.bias = Mat::Zero(1, out);
  if (rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    for (Eigen::Index i = 0; i < l.weight.size(); ++i) l.weight.data()[i] = dist(*rng);
  }
  return l;
}

Mlp make_mlp(const std::vector<int>& dims, std::mt19937_64* rng) {
  Mlp m;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) m.layers.push_back(make_linear(dims[i], dims[i + 1], rng));
  return m;
}

SpnParameters build(const ModelConfig& c, std::mt19937_64* rng) {
  c.validate();
  SpnParameters p;
  p.config = c;
  std::vector<int> enc{c.input_channels};
  enc.insert(enc.end(), c.encoder_dims.begin(), c.encoder_dims.end());
  p.point_encoder = make_mlp(enc, rng);
  p.node_projection = make_linear(c.raw_node_dim(), c.node_dim, rng);
  p.edge_encoder = make_mlp({kEdgeDescriptorDim, c.edge_dim, c.edge_dim}, rng);
  const int qh = c.query_dim / c.heads;
  const int th = c.target_dim / c.heads;
  for (int l = 0; l < c.layers; ++l) {
    GnnLayerParams g;
    g.query_node = make_linear(c.node_dim, c.query_dim / 2, rng);
    g.query_edge = make_linear(c.edge_dim, c.query_dim / 2, rng);
    g.target = make_linear(c.node_dim, c.target_dim, rng);
    for (int h = 0; h < c.heads; ++h) g.attention.push_back(make_mlp({qh, qh, th}, rng));
    g.node_update = make_mlp({c.node_dim + c.target_dim, c.node_dim + c.target_dim, c.node_dim}, rng);
    g.edge_update = make_mlp({2 * c.node_dim + c.edge_dim, c.node_dim + c.edge_dim, c.edge_dim}, rng);
    p.gnn.push_back(std::move(g));
  }
  p.node_classifier = make_mlp({c.node_dim, c.node_dim / 2, c.num_classes}, rng);
  p.predicate_classifier = make_mlp({c.edge_dim, c.edge_dim / 2, c.num_predicates}, rng);
  return p;
}

template <typename Self, typename Out>
void collect(Self& self, Out& out) {
  auto add_linear = [&out](const std::string& name, auto& l) {
    out.emplace_back(name + ".weight", &l.weight);
    out.emplace_back(name + ".bias", &l.bias);
  };
  auto add_mlp = [&](const std::string& name, auto& m) {
    for (std::size_t i = 0; i < m.layers.size(); ++i) add_linear(name + "." + std::to_string(i), m.layers[i]);
  };
  add_mlp("point_encoder", self.point_encoder);
  add_linear("node_projection", self.node_projection);
  add_mlp("edge_encoder", self.edge_encoder);
  for (std::size_t l = 0; l < self.gnn.size(); ++l) {
    auto& g = self.gnn[l];
    const std::string base = "gnn." + std::to_string(l);
    add_linear(base + ".query_node", g.query_node);
    add_linear(base + ".query_edge", g.query_edge);
    add_linear(base + ".target", g.target);
    for (std::size_t h = 0; h < g.attention.size(); ++h)
      add_mlp(base + ".attention." + std::to_string(h), g.attention[h]);
    add_mlp(base + ".node_update", g.node_update);
    add_mlp(base + ".edge_update", g.edge_update);
  }
  add_mlp("node_classifier", self.node_classifier);
  add_mlp("predicate_classifier", self.predicate_classifier);
}

}  // namespace

SpnParameters SpnParameters::initialize(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return build(config, &rng);
}

SpnParameters SpnParameters::zeros(const ModelConfig& config) { return build(config, nullptr); }

std::vector<std::pair<std::string, Mat*>> SpnParameters::tensors() {
  std::vector<std::pair<std::string, Mat*>> out;
  collect(*this, out);
  return out;
}

std::vector<std::pair<std::string, const Mat*>> SpnParameters::tensors() const {
  std::vector<std::pair<std::string, const Mat*>> out;
  collect(*this, out);
  return out;
}

std::size_t SpnParameters::scalar_count() const {
  std::size_t n = 0;
  for (const auto& [_, t] : tensors()) n += static_cast<std::size_t>(t->size());
  return n;
}

void SpnParameters::validate() const {
  const SpnParameters reference = zeros(config);
  auto mine = tensors();
  auto want = reference.tensors();
  if (mine.size() != want.size()) throw ConfigError("parameter structure does not match model config");
  for (std::size_t i = 0; i < mine.size(); ++i) {
    if (mine[i].first != want[i].first || mine[i].second->rows() != want[i].second->rows() ||
        mine[i].second->cols() != want[i].second->cols()) {
      throw ConfigError("parameter " + mine[i].first + " has shape [" + std::to_string(mine[i].second->rows()) +
                        ", " + std::to_string(mine[i].second->cols()) + "], expected [" +
                        std::to_string(want[i].second->rows()) + ", " + std::to_string(want[i].second->cols()) + "]");
    }
  }
}

Mat normalize_points(std::span<const Point> points, const Vec3& centroid, int channels) {
  if (points.empty()) throw DataError("normalize_points: no points");
  Mat out(static_cast<Eigen::Index>(points.size()), channels);
  double radius = 0.0;
  for (const auto& p : points) radius = std::max(radius, (p.position - centroid).norm());
  const double scale = radius > 0.0 ? 1.0 / radius : 1.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    const Vec3 x = (points[i].position - centroid) * scale;
    out.row(r).head<3>() = x.transpose();
    if (channels >= 6) out.row(r).segment<3>(3) = points[i].normal.transpose();
    if (channels >= 9) out.row(r).segment<3>(6) = points[i].color.transpose();
  }
  return out;
}

namespace {

Vec3 clamped_log(const Vec3& v) { return v.cwiseMax(kLogClamp).array().log().matrix(); }

}  // namespace

Mat node_descriptor(const ShapeProperties& p) {
  Mat d(1, kNodeDescriptorDim);
  const Vec3 log_b = clamped_log(p.bbox);
  d.row(0).head<3>() = p.std.transpose();
  d.row(0).segment<3>(3) = log_b.transpose();
  d(0, 6) = log_b.sum();
  d(0, 7) = std::log(std::max(p.length, kLogClamp));
  require_finite(d, "node descriptor");
  return d;
}

Mat edge_descriptor(const ShapeProperties& i, const ShapeProperties& j) {
  Mat r(1, kEdgeDescriptorDim);
  r.row(0).head<3>() = (i.centroid - j.centroid).transpose();
  r.row(0).segment<3>(3) = (i.std - j.std).transpose();
  r.row(0).segment<3>(6) = (i.bbox - j.bbox).transpose();
  r(0, 9) = std::log(std::max(i.length, kLogClamp)) - std::log(std::max(j.length, kLogClamp));
  r(0, 10) = clamped_log(i.bbox).sum() - clamped_log(j.bbox).sum();
  require_finite(r, "edge descriptor");
  return r;
}

Mat relu(const Mat& x) { return x.cwiseMax(0.0); }

Mat softmax_rows(const Mat& logits) {
  Mat out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    out.row(r) = (logits.row(r).array() - m).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return out;
}

Mat encode_point_sets(const SpnParameters& params, std::span<const Mat> sets) {
  Eigen::Index total = 0;
  for (const auto& s : sets) {
    if (s.rows() == 0) throw DataError("encode_points: segment without points");
    total += s.rows();
  }
  const int channels = params.config.input_channels;
  Mat stacked(total, channels);
  std::vector<int> group(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (std::size_t k = 0; k < sets.size(); ++k) {
    if (sets[k].cols() != channels) throw ConfigError("encode_points: channel mismatch");
    stacked.middleRows(row, sets[k].rows()) = sets[k];
    std::fill(group.begin() + row, group.begin() + row + sets[k].rows(), static_cast<int>(k));
    row += sets[k].rows();
  }
  const Mat per_point = params.point_encoder.forward(stacked);
  return max_aggregate(per_point, group, static_cast<int>(sets.size()));
}

Mat encode_points(const SpnParameters& params, const Mat& points) {
  return encode_point_sets(params, std::span<const Mat>(&points, 1));
}

Mat fat(const Mat& logits, const Mat& target) {
  if (logits.rows() != target.rows() || logits.cols() != target.cols()) throw ConfigError("fat: shape mismatch");
  return softmax_rows(logits).cwiseProduct(target);
}

Mat mfat_weights(const GnnLayerParams& layer, int heads, const Mat& query) {
  const auto qh = query.cols() / heads;
  const Eigen::Index th = layer.attention.front().out();
  Mat weights(query.rows(), th * heads);
  for (int h = 0; h < heads; ++h) {
    const Mat logits = layer.attention[static_cast<std::size_t>(h)].forward(query.middleCols(h * qh, qh));
    weights.middleCols(h * th, th) = softmax_rows(logits);
  }
  return weights;
}

Mat mfat(const GnnLayerParams& layer, int heads, const Mat& query, const Mat& target) {
  if (query.rows() != target.rows()) throw ConfigError("mfat: row mismatch");
  if (query.cols() % heads != 0 || target.cols() % heads != 0) throw ConfigError("mfat: dims not divisible by heads");
  const Mat w = mfat_weights(layer, heads, query);
  if (w.cols() != target.cols()) throw ConfigError("mfat: target width mismatch");
  return w.cwiseProduct(target);
}

Mat fan(const GnnLayerParams& layer, int heads, const Mat& source_nodes, const Mat& edges, const Mat& target_nodes) {
  if (source_nodes.rows() != edges.rows() || edges.rows() != target_nodes.rows())
    throw ConfigError("fan: row mismatch");
  const Mat qn = layer.query_node.forward(source_nodes);
  const Mat qe = layer.query_edge.forward(edges);
  Mat query(qn.rows(), qn.cols() + qe.cols());
  query << qn, qe;
  return mfat(layer, heads, query, layer.target.forward(target_nodes));
}

Mat max_aggregate(const Mat& messages, std::span<const int> group, int groups) {
  Mat out = Mat::Zero(groups, messages.cols());
  std::vector<bool> seen(static_cast<std::size_t>(groups), false);
  for (Eigen::Index r = 0; r < messages.rows(); ++r) {
    const int g = group[static_cast<std::size_t>(r)];
    if (!seen[static_cast<std::size_t>(g)]) {
      out.row(g) = messages.row(r);
      seen[static_cast<std::size_t>(g)] = true;
    } else {
      out.row(g) = out.row(g).cwiseMax(messages.row(r));
    }
  }
  return out;
}

namespace {

Mat gather(const Mat& x, std::span<const std::pair<int, int>> edges, bool source) {
  Mat out(static_cast<Eigen::Index>(edges.size()), x.cols());
  for (std::size_t k = 0; k < edges.size(); ++k)
    out.row(static_cast<Eigen::Index>(k)) = x.row(source ? edges[k].first : edges[k].second);
  return out;
}

Mat hcat(std::initializer_list<const Mat*> parts) {
  Eigen::Index cols = 0;
  const Eigen::Index rows = (*parts.begin())->rows();
  for (const Mat* p : parts) cols += p->cols();
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Mat* p : parts) {
    out.middleCols(c, p->cols()) = *p;
    c += p->cols();
  }
  return out;
}

}  // namespace

LayerOutput gnn_layer(const GnnLayerParams& layer, int heads, const Mat& nodes, const Mat& edge_features,
                      std::span<const std::pair<int, int>> edges, bool final_layer) {
  const Mat src = gather(nodes, edges, true);
  const Mat dst = gather(nodes, edges, false);
  std::vector<int> group(edges.size());
  for (std::size_t k = 0; k < edges.size(); ++k) group[k] = edges[k].first;

  LayerOutput out;
  const Mat messages =
      edges.empty() ? Mat(0, layer.target.out()) : fan(layer, heads, src, edge_features, dst);
  const Mat aggregated = max_aggregate(messages, group, static_cast<int>(nodes.rows()));
  out.nodes = layer.node_update.forward(hcat({&nodes, &aggregated}));
  out.edges = edges.empty() ? Mat(0, layer.edge_update.out())
                            : layer.edge_update.forward(hcat({&src, &edge_features, &dst}));
  if (!final_layer) {
    out.nodes = relu(out.nodes);
    out.edges = relu(out.edges);
  }
  return out;
}

GraphInput build_graph_input(std::span<const NodeSnapshot> nodes, std::span<const IdPair> edges, int channels) {
  GraphInput in;
  std::map<SegmentId, int> index;
  in.node_descriptors.resize(static_cast<Eigen::Index>(nodes.size()), kNodeDescriptorDim);
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    index[nodes[i].id] = static_cast<int>(i);
    in.node_points.push_back(normalize_points(nodes[i].points, nodes[i].properties.centroid, channels));
    in.node_descriptors.row(static_cast<Eigen::Index>(i)) = node_descriptor(nodes[i].properties);
  }
  in.edge_descriptors.resize(static_cast<Eigen::Index>(edges.size()), kEdgeDescriptorDim);
  for (std::size_t k = 0; k < edges.size(); ++k) {
    const auto [a, b] = edges[k];
    if (a == b) throw DataError("self-edge on segment " + std::to_string(a));
    const int ia = index.at(a);
    const int ib = index.at(b);
    in.edges.emplace_back(ia, ib);
    in.edge_descriptors.row(static_cast<Eigen::Index>(k)) =
        edge_descriptor(nodes[static_cast<std::size_t>(ia)].properties, nodes[static_cast<std::size_t>(ib)].properties);
  }
  return in;
}

ForwardResult forward(const GraphInput& input, const SpnParameters& params) {
  const auto& c = params.config;
  ForwardResult r;
  if (input.node_count() == 0) throw DataError("forward: empty graph");
  const Mat encoded = encode_point_sets(params, input.node_points);
  Mat raw(encoded.rows(), c.raw_node_dim());
  raw << encoded, input.node_descriptors;
  r.node_features.push_back(params.node_projection.forward(raw));
  r.edge_features.push_back(input.edges.empty() ? Mat(0, c.edge_dim)
                                                : params.edge_encoder.forward(input.edge_descriptors));
  for (int l = 0; l < c.layers; ++l) {
    auto out = gnn_layer(params.gnn[static_cast<std::size_t>(l)], c.heads, r.node_features.back(),
                         r.edge_features.back(), input.edges, l + 1 == c.layers);
    r.node_features.push_back(std::move(out.nodes));
    r.edge_features.push_back(std::move(out.edges));
  }
  r.node_logits = params.node_classifier.forward(r.node_features.back());
  r.edge_logits = input.edges.empty() ? Mat(0, c.num_predicates)
                                      : params.predicate_classifier.forward(r.edge_features.back());
  require_finite(r.node_logits, "node logits");
  require_finite(r.edge_logits, "edge logits");
  return r;
}

}  // namespace sgf
