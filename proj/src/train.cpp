#include "sgf/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <unordered_map>

#include "sgf/checkpoint.hpp"

namespace sgf {

namespace {

void check_labels(std::span<const int> labels, int classes, const char* what) {
  for (int y : labels)
    if (y < -1 || y >= classes)
      throw DataError(std::string(what) + " label " + std::to_string(y) + " outside [0, " + std::to_string(classes) +
                      ")");
}

double mean_cross_entropy(const Mat& logits, std::span<const int> labels) {
  double total = 0.0;
  int valid = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    const double m = logits.row(r).maxCoeff();
    const double lse = m + std::log((logits.row(r).array() - m).exp().sum());
    total += lse - logits(r, y);
    ++valid;
  }
  return valid > 0 ? total / valid : 0.0;
}

}  // namespace

LossTerms loss(const Mat& node_logits, const Mat& edge_logits, std::span<const int> node_labels,
               std::span<const int> edge_labels, double predicate_weight) {
  if (static_cast<Eigen::Index>(node_labels.size()) != node_logits.rows() ||
      static_cast<Eigen::Index>(edge_labels.size()) != edge_logits.rows())
    throw DataError("loss: label count does not match prediction");
  check_labels(node_labels, static_cast<int>(node_logits.cols()), "object");
  check_labels(edge_labels, static_cast<int>(edge_logits.cols()), "predicate");
  LossTerms t;
  t.object = mean_cross_entropy(node_logits, node_labels);
  t.predicate = mean_cross_entropy(edge_logits, edge_labels);
  t.total = t.object + predicate_weight * t.predicate;
  return t;
}

TapeForward forward_on_tape(ad::Tape& tape, const GraphInput& input, const SpnParameters& params) {
  using ad::Var;
  const auto& c = params.config;
  TapeForward f;
  std::unordered_map<const Mat*, Var> bound;
  for (const auto& [_, t] : params.tensors()) {
    Var v = tape.parameter(*t);
    f.bindings.push_back(v);
    bound.emplace(t, v);
  }
  auto lin = [&](Var x, const Linear& l) { return ad::linear(x, bound.at(&l.weight), bound.at(&l.bias)); };
  auto mlp = [&](Var x, const Mlp& m) {
    Var h = lin(x, m.layers.front());
    for (std::size_t i = 1; i < m.layers.size(); ++i) h = lin(ad::relu(h), m.layers[i]);
    return h;
  };

  const int n = input.node_count();
  const int e = input.edge_count();
  if (n == 0) throw DataError("forward: empty graph");

  Eigen::Index total = 0;
  for (const auto& s : input.node_points) total += s.rows();
  Mat stacked(total, c.input_channels);
  std::vector<int> point_group;
  point_group.reserve(static_cast<std::size_t>(total));
  Eigen::Index row = 0;
  for (int k = 0; k < n; ++k) {
    const Mat& s = input.node_points[static_cast<std::size_t>(k)];
    if (s.rows() == 0) throw DataError("encode_points: segment without points");
    stacked.middleRows(row, s.rows()) = s;
    point_group.insert(point_group.end(), static_cast<std::size_t>(s.rows()), k);
    row += s.rows();
  }
  Var encoded = ad::segment_max(mlp(tape.constant(std::move(stacked)), params.point_encoder), point_group, n);
  Var raw_parts[] = {encoded, tape.constant(input.node_descriptors)};
  Var v = lin(ad::concat_cols(raw_parts), params.node_projection);
  Var ef = e > 0 ? mlp(tape.constant(input.edge_descriptors), params.edge_encoder) : tape.constant(Mat(0, c.edge_dim));
  f.node_features.push_back(v);
  f.edge_features.push_back(ef);

  std::vector<int> src_idx, dst_idx;
  for (const auto& [a, b] : input.edges) {
    src_idx.push_back(a);
    dst_idx.push_back(b);
  }
  const Eigen::Index qh = c.query_dim / c.heads;
  const Eigen::Index th = c.target_dim / c.heads;
  for (int l = 0; l < c.layers; ++l) {
    const auto& g = params.gnn[static_cast<std::size_t>(l)];
    const bool final_layer = l + 1 == c.layers;
    Var agg;
    Var next_edges;
    if (e > 0) {
      Var src = ad::gather_rows(v, src_idx);
      Var dst = ad::gather_rows(v, dst_idx);
      Var q_parts[] = {lin(src, g.query_node), lin(ef, g.query_edge)};
      Var query = ad::concat_cols(q_parts);
      Var target = lin(dst, g.target);
      std::vector<Var> heads;
      for (int h = 0; h < c.heads; ++h) {
        Var logits = mlp(ad::slice_cols(query, h * qh, qh), g.attention[static_cast<std::size_t>(h)]);
        heads.push_back(ad::mul(ad::softmax_rows(logits), ad::slice_cols(target, h * th, th)));
      }
      agg = ad::segment_max(ad::concat_cols(heads), src_idx, n);
      Var e_parts[] = {src, ef, dst};
      next_edges = mlp(ad::concat_cols(e_parts), g.edge_update);
    } else {
      agg = tape.constant(Mat::Zero(n, c.target_dim));
      next_edges = tape.constant(Mat(0, c.edge_dim));
    }
    Var n_parts[] = {v, agg};
    Var next_nodes = mlp(ad::concat_cols(n_parts), g.node_update);
    if (!final_layer) {
      next_nodes = ad::relu(next_nodes);
      if (e > 0) next_edges = ad::relu(next_edges);
    }
    v = next_nodes;
    ef = next_edges;
    f.node_features.push_back(v);
    f.edge_features.push_back(ef);
  }
  f.node_logits = mlp(v, params.node_classifier);
  f.edge_logits = e > 0 ? mlp(ef, params.predicate_classifier) : tape.constant(Mat(0, c.num_predicates));
  return f;
}

GradientResult compute_gradients(const GraphInput& input, std::span<const int> node_labels,
                                 std::span<const int> edge_labels, const SpnParameters& params,
                                 double predicate_weight, ad::Reduction reduction) {
  const auto& c = params.config;
  if (static_cast<int>(node_labels.size()) != input.node_count() ||
      static_cast<int>(edge_labels.size()) != input.edge_count())
    throw DataError("compute_gradients: label count does not match graph");
  check_labels(node_labels, c.num_classes, "object");
  check_labels(edge_labels, c.num_predicates, "predicate");

  ad::Tape tape;
  TapeForward f = forward_on_tape(tape, input, params);
  ad::Var obj = ad::cross_entropy(f.node_logits, node_labels, reduction);
  ad::Var pred = ad::cross_entropy(f.edge_logits, edge_labels, reduction);
  ad::Var total = ad::add(obj, ad::scale(pred, predicate_weight));
  tape.backward(total);

  GradientResult r;
  r.loss.object = obj.value()(0, 0);
  r.loss.predicate = pred.value()(0, 0);
  r.loss.total = total.value()(0, 0);
  if (!std::isfinite(r.loss.total)) throw NumericError("non-finite training loss");
  r.gradients = SpnParameters::zeros(c);
  auto slots = r.gradients.tensors();
  for (std::size_t i = 0; i < slots.size(); ++i)
    if (const Mat* g = tape.grad(f.bindings[i].id)) *slots[i].second = *g;
  return r;
}

OptimizerState OptimizerState::zeros(const ModelConfig& config) {
  return {SpnParameters::zeros(config), SpnParameters::zeros(config), SpnParameters::zeros(config), 0};
}

double edge_scaled_learning_rate(double lr_base, std::size_t n_edges) {
  const double n = std::max(static_cast<double>(n_edges), std::numbers::e);
  return lr_base / std::log(n);
}

void optimizer_step(SpnParameters& params, const SpnParameters& grads, OptimizerState& state,
                    const OptimizerConfig& config, std::size_t n_edges) {
  ++state.step;
  const double lr = edge_scaled_learning_rate(config.lr_base, n_edges);
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
  auto p = params.tensors();
  auto g = grads.tensors();
  auto m = state.first_moment.tensors();
  auto v = state.second_moment.tensors();
  auto vmax = state.max_second_moment.tensors();
  for (std::size_t i = 0; i < p.size(); ++i) {
    Mat& w = *p[i].second;
    const Mat& gr = *g[i].second;
    Mat& mi = *m[i].second;
    Mat& vi = *v[i].second;
    Mat& vm = *vmax[i].second;
    w *= 1.0 - lr * config.weight_decay;
    mi = config.beta1 * mi + (1.0 - config.beta1) * gr;
    vi = config.beta2 * vi + (1.0 - config.beta2) * gr.cwiseAbs2();
    vm = vm.cwiseMax(vi);
    const Mat denom = ((vm / bc2).cwiseSqrt().array() + config.epsilon).matrix();
    w -= (lr / bc1) * mi.cwiseQuotient(denom);
  }
  require_finite(*p.front().second, "parameters after optimizer step");
}

void save_optimizer_state(const std::string& prefix, const OptimizerState& state) {
  std::vector<std::pair<std::string, const Mat*>> all;
  for (const auto& [n, t] : state.first_moment.tensors()) all.emplace_back("m." + n, t);
  for (const auto& [n, t] : state.second_moment.tensors()) all.emplace_back("v." + n, t);
  for (const auto& [n, t] : state.max_second_moment.tensors()) all.emplace_back("vmax." + n, t);
  write_tensor_set(prefix, all,
                   nlohmann::json{{"kind", "optimizer-state"},
                                  {"step", state.step},
                                  {"config", to_json(state.first_moment.config)}});
}

OptimizerState load_optimizer_state(const std::string& prefix, const ModelConfig& config) {
  TensorSet set = read_tensor_set(prefix);
  OptimizerState s = OptimizerState::zeros(config);
  s.step = set.meta.value("step", std::int64_t{0});
  std::vector<std::pair<std::string, Mat*>> all;
  for (const auto& [n, t] : s.first_moment.tensors()) all.emplace_back("m." + n, t);
  for (const auto& [n, t] : s.second_moment.tensors()) all.emplace_back("v." + n, t);
  for (const auto& [n, t] : s.max_second_moment.tensors()) all.emplace_back("vmax." + n, t);
  if (all.size() != set.tensors.size()) throw DataError("optimizer state " + prefix + " has wrong tensor count");
  for (std::size_t i = 0; i < all.size(); ++i) {
    if (all[i].first != set.tensors[i].first || all[i].second->rows() != set.tensors[i].second.rows() ||
        all[i].second->cols() != set.tensors[i].second.cols())
      throw DataError("optimizer tensor " + set.tensors[i].first + " does not match the model");
    *all[i].second = set.tensors[i].second;
  }
  return s;
}

namespace {

Adjacency scene_adjacency(const TrainingScene& scene) {
  Adjacency adj;
  for (const auto& s : scene.segments) adj.try_emplace(s.id);
  for (const auto& [a, b] : scene.edges) {
    adj[a].insert(b);
    adj[b].insert(a);
  }
  return adj;
}

TrainingBatch assemble(const TrainingScene& scene, const std::set<SegmentId>& nodes, const std::vector<IdPair>& kept,
                       std::vector<NodeSnapshot> snapshots, int channels) {
  TrainingBatch batch;
  std::map<SegmentId, int> label;
  for (const auto& s : scene.segments) label[s.id] = s.label;
  batch.node_ids.assign(nodes.begin(), nodes.end());
  for (SegmentId id : batch.node_ids) batch.node_labels.push_back(label.at(id));
  for (const auto& [a, b] : kept) {
    batch.edges.emplace_back(a, b);
    batch.edges.emplace_back(b, a);
  }
  std::sort(batch.edges.begin(), batch.edges.end());
  for (const auto& e : batch.edges) {
    auto it = scene.edge_labels.find(e);
    batch.edge_labels.push_back(it == scene.edge_labels.end() ? -1 : it->second);
  }
  batch.input = build_graph_input(snapshots, batch.edges, channels);
  return batch;
}

}  // namespace

std::set<SegmentId> select_training_nodes(const TrainingScene& scene, std::span<const SegmentId> seeds, int hops) {
  return neighborhood(scene_adjacency(scene), std::set<SegmentId>(seeds.begin(), seeds.end()), hops);
}

TrainingBatch sample_training_subgraph(const TrainingScene& scene, std::mt19937_64& rng, const SamplerConfig& config) {
  if (scene.segments.empty()) throw DataError("sample_training_subgraph: empty scene");
  std::uniform_int_distribution<std::size_t> pick(0, scene.segments.size() - 1);
  std::vector<SegmentId> seeds;
  for (int s = 0; s < config.seeds; ++s) seeds.push_back(scene.segments[pick(rng)].id);
  const std::set<SegmentId> nodes = select_training_nodes(scene, seeds, config.hops);

  std::vector<IdPair> kept;
  std::bernoulli_distribution keep(1.0 - config.edge_dropout);
  for (const auto& [a, b] : scene.edges) {
    if (!nodes.contains(a) || !nodes.contains(b)) continue;
    if (keep(rng)) kept.push_back(undirected(a, b));
  }

  std::vector<NodeSnapshot> snapshots;
  for (const auto& s : scene.segments) {
    if (!nodes.contains(s.id)) continue;
    NodeSnapshot n;
    n.id = s.id;
    n.point_count = s.points.size();
    if (s.points.size() <= config.points_per_segment) {
      n.points = s.points;
    } else {
      std::sample(s.points.begin(), s.points.end(), std::back_inserter(n.points), config.points_per_segment, rng);
    }
    n.properties = recompute_properties(n.points);
    snapshots.push_back(std::move(n));
  }
  std::sort(snapshots.begin(), snapshots.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return assemble(scene, nodes, kept, std::move(snapshots), config.input_channels);
}

TrainingBatch full_scene_batch(const TrainingScene& scene, const SamplerConfig& config, std::uint64_t sample_seed) {
  std::set<SegmentId> nodes;
  std::vector<NodeSnapshot> snapshots;
  for (const auto& s : scene.segments) {
    nodes.insert(s.id);
    NodeSnapshot n;
    n.id = s.id;
    n.point_count = s.points.size();
    n.properties = recompute_properties(s.points);
    n.points = sample_points(s.points, config.points_per_segment, sample_seed, s.id);
    snapshots.push_back(std::move(n));
  }
  std::sort(snapshots.begin(), snapshots.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  return assemble(scene, nodes, scene.edges, std::move(snapshots), config.input_channels);
}

Trainer::Trainer(TrainConfig config)
    : Trainer(config, SpnParameters::initialize(config.model, config.seed), OptimizerState::zeros(config.model)) {}

Trainer::Trainer(TrainConfig config, SpnParameters params, OptimizerState state)
    : config_(std::move(config)), params_(std::move(params)), state_(std::move(state)), rng_(config_.seed ^ 0x7a11ULL) {
  config_.sampler.input_channels = config_.model.input_channels;
  params_.validate();
}

EpochRecord Trainer::run_epoch(std::span<const TrainingScene> scenes) {
  std::vector<std::size_t> order(scenes.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::shuffle(order.begin(), order.end(), rng_);
  EpochRecord rec;
  rec.epoch = ++epoch_;
  int batches = 0;
  for (std::size_t i : order) {
    if (scenes[i].segments.empty()) continue;
    TrainingBatch batch = sample_training_subgraph(scenes[i], rng_, config_.sampler);
    GradientResult g =
        compute_gradients(batch.input, batch.node_labels, batch.edge_labels, params_, config_.predicate_weight);
    optimizer_step(params_, g.gradients, state_, config_.optimizer, batch.edges.size());
    rec.loss += g.loss.total;
    rec.object_loss += g.loss.object;
    rec.predicate_loss += g.loss.predicate;
    ++batches;
  }
  if (batches > 0) {
    rec.loss /= batches;
    rec.object_loss /= batches;
    rec.predicate_loss /= batches;
  }
  return rec;
}

std::vector<EpochRecord> Trainer::fit(std::span<const TrainingScene> scenes,
                                      const std::function<void(const EpochRecord&)>& on_epoch) {
  std::vector<EpochRecord> out;
  for (int e = 0; e < config_.epochs; ++e) {
    out.push_back(run_epoch(scenes));
    if (on_epoch) on_epoch(out.back());
  }
  return out;
}

void write_loss_curve_csv(const std::string& path, std::span<const EpochRecord> records) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path);
  out << "epoch,loss,object_loss,predicate_loss\n";
  out.precision(10);
  for (const auto& r : records)
    out << r.epoch << ',' << r.loss << ',' << r.object_loss << ',' << r.predicate_loss << '\n';
}

}  // namespace sgf
