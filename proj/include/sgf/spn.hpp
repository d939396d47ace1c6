#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sgf/common.hpp"
#include "sgf/neighbor_graph.hpp"
#include "sgf/scene_map.hpp"

namespace sgf {

/// Dimensions of the scene-graph prediction network.
struct ModelConfig {
  std::vector<int> encoder_dims{64, 128, 512};
  /// 3 = normalized xyz, 6 = xyz + normal, 9 = xyz + normal + rgb.
  int input_channels = 3;
  int node_dim = 256;
  int edge_dim = 128;
  int query_dim = 256;
  int target_dim = 128;
  int heads = 8;
  int layers = 2;
  int num_classes = 5;
  int num_predicates = 4;

  /// D_n=256, D_e=128, d_q=256, d_tau=128, 8 heads.
  static ModelConfig desk();
  /// D_n=512, D_e=256, d_q=512, d_tau=256, 8 heads.
  static ModelConfig full();

  [[nodiscard]] int encoder_out() const { return encoder_dims.back(); }
  [[nodiscard]] int raw_node_dim() const { return encoder_out() + 8; }
  void validate() const;
};

inline constexpr int kNodeDescriptorDim = 8;
inline constexpr int kEdgeDescriptorDim = 11;
inline constexpr double kLogClamp = 1e-6;

struct Linear {
  Mat weight;  // in x out
  Mat bias;    // 1 x out

  [[nodiscard]] Mat forward(const Mat& x) const;
  [[nodiscard]] int in() const { return static_cast<int>(weight.rows()); }
  [[nodiscard]] int out() const { return static_cast<int>(weight.cols()); }
};

/// Fully connected layers with ReLU between them (not after the last).
struct Mlp {
  std::vector<Linear> layers;

  [[nodiscard]] Mat forward(const Mat& x) const;
  [[nodiscard]] int in() const { return layers.front().in(); }
  [[nodiscard]] int out() const { return layers.back().out(); }
};

struct GnnLayerParams {
  Linear query_node;   // D_n -> d_q/2
  Linear query_edge;   // D_e -> d_q/2
  Linear target;       // D_n -> d_tau
  std::vector<Mlp> attention;  // one per head: d_q/h -> d_q/h -> d_tau/h
  Mlp node_update;     // D_n + d_tau -> D_n + d_tau -> D_n
  Mlp edge_update;     // 2 D_n + D_e -> D_n + D_e -> D_e
};

struct SpnParameters {
  ModelConfig config;
  Mlp point_encoder;
  Linear node_projection;  // raw node (encoder_out + 8) -> D_n
  Mlp edge_encoder;        // 11 -> D_e -> D_e
  std::vector<GnnLayerParams> gnn;
  Mlp node_classifier;
  Mlp predicate_classifier;

  /// Glorot-uniform weights, zero biases, deterministic in `seed`.
  static SpnParameters initialize(const ModelConfig& config, std::uint64_t seed);
  /// Same structure, all zeros (gradient and moment buffers).
  static SpnParameters zeros(const ModelConfig& config);

  /// Every tensor with a stable hierarchical name, in a fixed order.
  std::vector<std::pair<std::string, Mat*>> tensors();
  std::vector<std::pair<std::string, const Mat*>> tensors() const;
  [[nodiscard]] std::size_t scalar_count() const;

  /// Checks every declared shape against `config`; throws ConfigError.
  void validate() const;
};

// ---- inputs -----------------------------------------------------------------

/// Centers on `centroid`, scales so the farthest point lies on the unit sphere,
/// and appends normals/colors when the model asks for them.
Mat normalize_points(std::span<const Point> points, const Vec3& centroid, int channels);
/// [sigma, ln b, ln volume, ln length] with extents clamped to kLogClamp.
Mat node_descriptor(const ShapeProperties& p);
/// [c_i - c_j, sigma_i - sigma_j, b_i - b_j, ln(l_i / l_j), ln(v_i / v_j)].
Mat edge_descriptor(const ShapeProperties& i, const ShapeProperties& j);

// ---- kernels ----------------------------------------------------------------

Mat relu(const Mat& x);
Mat softmax_rows(const Mat& logits);

/// Per-point MLP then max over rows: 1 x encoder_out.
Mat encode_points(const SpnParameters& params, const Mat& points);
/// Batched encoder over several point sets. Returns one row per set.
Mat encode_point_sets(const SpnParameters& params, std::span<const Mat> sets);

/// softmax(logits) * target, row-wise.
Mat fat(const Mat& logits, const Mat& target);
/// Head-split attention weights: for each head, softmax(g_a^k(q_k)). E x d_tau.
Mat mfat_weights(const GnnLayerParams& layer, int heads, const Mat& query);
Mat mfat(const GnnLayerParams& layer, int heads, const Mat& query, const Mat& target);
/// Messages for directed edges i->j, one row per edge.
Mat fan(const GnnLayerParams& layer, int heads, const Mat& source_nodes, const Mat& edges, const Mat& target_nodes);

/// Elementwise max of rows grouped by `group[row]`; groups with no rows are zero.
Mat max_aggregate(const Mat& messages, std::span<const int> group, int groups);

struct LayerOutput {
  Mat nodes;
  Mat edges;
};

/// One synchronous message-passing layer. `edges` lists directed (source, target)
/// node indices; messages are aggregated at the source. ReLU is applied to both
/// outputs unless `final_layer`.
LayerOutput gnn_layer(const GnnLayerParams& layer, int heads, const Mat& nodes, const Mat& edge_features,
                      std::span<const std::pair<int, int>> edges, bool final_layer);

// ---- whole graph ------------------------------------------------------------

struct GraphInput {
  std::vector<Mat> node_points;       // per node: n_i x channels, normalized
  Mat node_descriptors;               // N x 8
  std::vector<std::pair<int, int>> edges;  // directed, node indices
  Mat edge_descriptors;               // E x 11

  [[nodiscard]] int node_count() const { return static_cast<int>(node_points.size()); }
  [[nodiscard]] int edge_count() const { return static_cast<int>(edges.size()); }
};

/// Builds network input over `nodes` (any order) and directed `edges` given by ids.
GraphInput build_graph_input(std::span<const NodeSnapshot> nodes, std::span<const IdPair> edges, int channels);

struct ForwardResult {
  std::vector<Mat> node_features;  // layer 0..L, N x D_n
  std::vector<Mat> edge_features;  // layer 0..L, E x D_e
  Mat node_logits;                 // N x C_obj
  Mat edge_logits;                 // E x C_pred
};

ForwardResult forward(const GraphInput& input, const SpnParameters& params);

/// Per-node class and per-directed-edge predicate probabilities for one pass.
struct Prediction {
  FrameIndex frame = 0;
  std::vector<SegmentId> node_ids;
  Mat node_probabilities;
  std::vector<std::size_t> node_sizes;
  std::vector<ShapeProperties> node_properties;
  std::vector<IdPair> edges;
  Mat edge_probabilities;
};

}  // namespace sgf
