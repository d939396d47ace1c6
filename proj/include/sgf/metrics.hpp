#pragma once

#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sgf/common.hpp"

namespace sgf {

// ---- Recall@k -------------------------------------------------------------------

enum class RecallMode { Object, Predicate, Relationship };

/// Predicted distributions and ground truth for one graph. Labels of -1 are not scored.
struct RecallInput {
  Mat node_probabilities;                  // N x C
  Mat edge_probabilities;                  // E x P
  std::vector<std::pair<int, int>> edges;  // (subject, object) node indices
  std::vector<int> node_labels;
  std::vector<int> edge_labels;
};

struct RecallResult {
  std::size_t hits = 0;
  std::size_t total = 0;
  [[nodiscard]] double value() const { return total == 0 ? 0.0 : static_cast<double>(hits) / total; }
};

/// 0-based rank of `index` in `scores`: entries strictly larger, plus equal ones with a
/// lower index.
std::size_t rank_of(const Eigen::Ref<const Eigen::RowVectorXd>& scores, int index);

/// Object/predicate: true label within the top k of its distribution. Relationship:
/// per edge with labeled endpoints, the GT triplet's rank among all (s, o, p) products,
/// ties broken by ascending (s, o, p). Edges labeled `skip_predicate` are not scored
/// in relationship mode. Throws ConfigError for k < 1.
RecallResult recall_at_k(const RecallInput& input, int k, RecallMode mode, int skip_predicate = 0);

// ---- IoU ------------------------------------------------------------------------

/// Label for points that are left out of the comparison.
inline constexpr int kSkippedPoint = -2;

/// |pred = c and gt = c| / |pred = c or gt = c|; nullopt when c appears in neither.
/// Positions where either side is kSkippedPoint are ignored.
std::optional<double> class_iou(std::span<const int> pred, std::span<const int> gt, int c);

struct IouReport {
  std::vector<std::optional<double>> per_class;
  double mean = 0.0;  // over classes present in gt
  int classes_in_mean = 0;
};
IouReport iou_report(std::span<const int> pred, std::span<const int> gt, int num_classes);

enum class MissingPoints { NearestNeighbor, Skip };

/// Per GT point, the label of the nearest reconstructed point. In Skip mode a GT point
/// with no reconstructed point within `radius` gets kSkippedPoint.
std::vector<int> transfer_labels(std::span<const Vec3> gt_points, std::span<const Vec3> recon_points,
                                 std::span<const int> recon_labels, MissingPoints mode, double radius = 0.05);

// ---- panoptic quality -----------------------------------------------------------

/// Per-point instance id and class; class -1 marks points without a label.
struct PanopticLabels {
  std::vector<int> instance;
  std::vector<int> label;
};

struct PqStats {
  int label = 0;
  bool stuff = false;
  std::size_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
  double sq = 0.0, rq = 0.0, pq = 0.0;
};

struct PqSummary {
  double pq = 0.0, sq = 0.0, rq = 0.0;
  int classes = 0;
};

struct PqReport {
  std::vector<PqStats> classes;  // classes with any prediction or ground truth
  /// Means over classes.
  PqSummary all, things, stuff;
  /// Pooled over classes: SQ = sum IoU / sum TP, RQ = sum TP / (sum TP + sum FP/2 + sum FN/2).
  PqSummary pooled;
  std::vector<std::pair<int, int>> matches;  // (pred segment, gt segment) indices into the segment lists
};

/// Segments are (class, instance) groups for things and whole classes for stuff.
/// A prediction matches a GT segment of the same class when IoU > 0.5.
PqReport panoptic_quality(const PanopticLabels& pred, const PanopticLabels& gt, const std::set<int>& stuff);

/// Sums per-class TP/FP/FN/IoU over several reports and recomputes the summaries.
PqReport combine(std::span<const PqReport> reports);

// ---- reports --------------------------------------------------------------------

struct Accuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  std::size_t baseline_correct = 0;  // best constant prediction
  int baseline_label = -1;
  [[nodiscard]] double value() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
  [[nodiscard]] double baseline() const { return total == 0 ? 0.0 : static_cast<double>(baseline_correct) / total; }
};

/// Argmax accuracy over labeled rows and the majority-label baseline on the same rows.
Accuracy accuracy(std::span<const int> predicted, std::span<const int> labels, int num_labels);

struct EvalReport {
  std::vector<std::string> classes;
  std::vector<std::string> predicates;
  std::vector<std::pair<int, RecallResult>> object_recall, predicate_recall, relationship_recall;
  Accuracy node_accuracy, edge_accuracy;
  IouReport point_iou_nn, point_iou_skip, segment_iou;
  PqReport panoptic;
  std::size_t scenes = 0;
};

nlohmann::json to_json(const EvalReport& r);
/// One row per class: IoU variants and PQ/SQ/RQ.
std::string per_class_csv(const EvalReport& r);

}  // namespace sgf
