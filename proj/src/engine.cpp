#include "sgf/engine.hpp"

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdio>
#include <cstdlib>
#include <deque>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <thread>

#include "sgf/stream_io.hpp"

namespace sgf {

using nlohmann::json;

PipelineConfig PipelineConfig::desk() {
  PipelineConfig c;
  c.graph.min_segment_points = 64;
  return c;
}

void PipelineConfig::validate() const {
  if (!(graph.proximity_threshold >= 0.0)) throw ConfigError("proximity_threshold must be >= 0");
  if (!(graph.resize_ratio >= 0.0)) throw ConfigError("resize_ratio must be >= 0");
  if (graph.stale_frames < 1) throw ConfigError("stale_frames must be >= 1");
  if (graph.points_per_segment < 1) throw ConfigError("points_per_segment must be >= 1");
  if (queue_capacity < 1) throw ConfigError("queue_capacity must be >= 1");
  if (!(max_fusion_weight >= 1.0)) throw ConfigError("max_fusion_weight must be >= 1");
}

json to_json(const PipelineConfig& c) {
  return {{"proximity_threshold", c.graph.proximity_threshold},
          {"resize_ratio", c.graph.resize_ratio},
          {"stale_frames", c.graph.stale_frames},
          {"min_segment_points", c.graph.min_segment_points},
          {"full_sweep_interval", c.graph.full_sweep_interval},
          {"points_per_segment", c.graph.points_per_segment},
          {"sample_seed", c.graph.sample_seed},
          {"mode", c.mode == WorkerMode::Sync ? "sync" : "async"},
          {"queue_capacity", c.queue_capacity},
          {"max_fusion_weight", c.max_fusion_weight},
          {"seed", c.seed},
          {"export_path", c.export_path},
          {"report_path", c.report_path}};
}

PipelineConfig pipeline_config_from_json(const json& j, PipelineConfig c) {
  if (!j.is_object()) throw ConfigError("pipeline config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "proximity_threshold") c.graph.proximity_threshold = v.get<double>();
      else if (key == "resize_ratio") c.graph.resize_ratio = v.get<double>();
      else if (key == "stale_frames") c.graph.stale_frames = v.get<FrameIndex>();
      else if (key == "min_segment_points") c.graph.min_segment_points = v.get<std::size_t>();
      else if (key == "full_sweep_interval") c.graph.full_sweep_interval = v.get<FrameIndex>();
      else if (key == "points_per_segment") c.graph.points_per_segment = v.get<std::size_t>();
      else if (key == "sample_seed") c.graph.sample_seed = v.get<std::uint64_t>();
      else if (key == "mode") {
        const auto m = v.get<std::string>();
        if (m != "sync" && m != "async") throw ConfigError("mode must be 'sync' or 'async'");
        c.mode = m == "sync" ? WorkerMode::Sync : WorkerMode::Async;
      } else if (key == "queue_capacity") c.queue_capacity = v.get<std::size_t>();
      else if (key == "max_fusion_weight") c.max_fusion_weight = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "export_path") c.export_path = v.get<std::string>();
      else if (key == "report_path") c.report_path = v.get<std::string>();
      else throw ConfigError("unknown pipeline config key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("pipeline config: ") + e.what());
  }
  c.validate();
  return c;
}

PipelineConfig pipeline_config_from_env(PipelineConfig base) {
  const char* path = std::getenv("SGF_CONFIG");
  if (!path || !*path) return base;
  std::ifstream in(path);
  if (!in) throw ConfigError(std::string("cannot open SGF_CONFIG file ") + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed SGF_CONFIG file: ") + e.what());
  }
  return pipeline_config_from_json(j, base);
}

double StageStats::mean() const {
  if (samples.empty()) return 0.0;
  double s = 0.0;
  for (double v : samples) s += v;
  return s / static_cast<double>(samples.size());
}

double StageStats::p95() const {
  if (samples.empty()) return 0.0;
  std::vector<double> v = samples;
  const auto k = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(v.size()))) - 1;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

json LatencyReport::to_json() const {
  json st = json::object();
  for (const auto& [name, s] : stages)
    st[name] = {{"mean_ms", s.mean()}, {"p95_ms", s.p95()}, {"samples", s.samples.size()}};
  auto avg = [&](const std::vector<std::size_t>& v) {
    json a = json::array();
    for (std::size_t x : v) a.push_back(predictions ? static_cast<double>(x) / static_cast<double>(predictions) : 0.0);
    return a;
  };
  return {{"frames", frames},
          {"predictions", predictions},
          {"coalesced_frames", coalesced_frames},
          {"stages", st},
          {"recompute",
           {{"node_total", node_computations},
            {"edge_total", edge_computations},
            {"node_plan_total", node_plan},
            {"edge_plan_total", edge_plan},
            {"node_mean_per_prediction", avg(node_computations)},
            {"edge_mean_per_prediction", avg(edge_computations)}}}};
}

std::string LatencyReport::table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "frames %zu  predictions %zu  coalesced %zu\n", frames, predictions,
                coalesced_frames);
  out += line;
  std::snprintf(line, sizeof line, "%-22s %12s %12s %10s\n", "stage", "mean [ms]", "p95 [ms]", "samples");
  out += line;
  for (const auto& [name, s] : stages) {
    std::snprintf(line, sizeof line, "%-22s %12.4f %12.4f %10zu\n", name.c_str(), s.mean(), s.p95(),
                  s.samples.size());
    out += line;
  }
  std::snprintf(line, sizeof line, "%-22s %12s %12s\n", "recompute", "nodes/pred", "edges/pred");
  out += line;
  const double n = predictions ? static_cast<double>(predictions) : 1.0;
  for (std::size_t l = 0; l < node_computations.size(); ++l) {
    std::snprintf(line, sizeof line, "%-22s %12.2f %12.2f\n", ("layer " + std::to_string(l)).c_str(),
                  static_cast<double>(node_computations[l]) / n, static_cast<double>(edge_computations[l]) / n);
    out += line;
  }
  return out;
}

namespace {

using Clock = std::chrono::steady_clock;

double ms_since(Clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

/// Work item handed from the map worker to the prediction worker.
struct Job {
  SubgraphSnapshot snapshot;
  std::vector<SegmentId> removed;
  std::map<IdPair, bool> edges;  // latest presence of every edge changed since the last job
};

template <typename T>
class BoundedQueue {
 public:
  explicit BoundedQueue(std::size_t capacity) : capacity_(capacity) {}

  bool try_push(T&& v) {
    std::lock_guard lock(mu_);
    if (items_.size() >= capacity_) return false;
    items_.push_back(std::move(v));
    cv_.notify_all();
    return true;
  }
  void push(T&& v) {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return items_.size() < capacity_; });
    items_.push_back(std::move(v));
    cv_.notify_all();
  }
  std::optional<T> pop() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [&] { return !items_.empty() || closed_; });
    if (items_.empty()) return std::nullopt;
    T v = std::move(items_.front());
    items_.pop_front();
    cv_.notify_all();
    return v;
  }
  void close() {
    std::lock_guard lock(mu_);
    closed_ = true;
    cv_.notify_all();
  }

 private:
  std::size_t capacity_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<T> items_;
  bool closed_ = false;
};

/// Prediction worker and fuser: owns the predictor mirror and the fused graph.
class PredictionWorker {
 public:
  PredictionWorker(const SpnParameters& params, const PipelineConfig& config)
      : predictor_(params), fused_(kSamePartPredicate, config.max_fusion_weight) {
    const auto L = static_cast<std::size_t>(params.config.layers) + 1;
    report_.node_computations.assign(L, 0);
    report_.edge_computations.assign(L, 0);
    report_.node_plan.assign(L, 0);
    report_.edge_plan.assign(L, 0);
  }

  void process(const Job& job) {
    for (SegmentId id : job.removed) fused_.remove_segment(id);
    for (SegmentId id : job.removed)
      if (predictor_.contains(id)) predictor_.remove_node(id);
    for (const auto& [e, present] : job.edges)
      if (predictor_.contains(e.first) && predictor_.contains(e.second)) predictor_.set_edge(e.first, e.second, present);
    if (job.snapshot.empty()) return;

    const auto t0 = Clock::now();
    const Prediction p = predictor_.predict(job.snapshot);
    report_.add("predict", ms_since(t0));
    const auto& times = predictor_.last_times();
    report_.add("node_feature", times.node_feature);
    report_.add("edge_feature", times.edge_feature);
    for (std::size_t l = 0; l < times.gnn.size(); ++l) report_.add("gnn_" + std::to_string(l + 1), times.gnn[l]);
    report_.add("classify", times.classify);
    const auto& counts = predictor_.last_counts();
    const auto& plan = predictor_.last_plan();
    for (std::size_t l = 0; l < counts.nodes.size(); ++l) {
      report_.node_computations[l] += counts.nodes[l];
      report_.edge_computations[l] += counts.edges[l];
      report_.node_plan[l] += plan.nodes[l].size();
      report_.edge_plan[l] += plan.edges[l].size();
    }
    ++report_.predictions;

    const auto t1 = Clock::now();
    fused_.apply_prediction(p);
    report_.add("fusion", ms_since(t1));
  }

  FusedSceneGraph& fused() { return fused_; }
  LatencyReport& report() { return report_; }

 private:
  IncrementalPredictor predictor_;
  FusedSceneGraph fused_;
  LatencyReport report_;
};

}  // namespace

PipelineResult run_pipeline(std::span<const FrameUpdate> frames, const SpnParameters& params,
                            const PipelineConfig& config) {
  config.validate();
  params.validate();
  SceneMap map;
  NeighborGraph graph(config.graph);
  PredictionWorker worker(params, config);
  LatencyReport map_report;

  const bool async = config.mode == WorkerMode::Async;
  BoundedQueue<Job> queue(config.queue_capacity);
  std::thread thread;
  std::exception_ptr worker_error;
  if (async)
    thread = std::thread([&] {
      while (auto job = queue.pop()) {
        if (worker_error) continue;
        try {
          worker.process(*job);
        } catch (...) {
          worker_error = std::current_exception();
        }
      }
    });

  Job pending;
  // Flags that cannot be queued stay set in the map, so they coalesce into the next job.
  auto flag_and_send = [&](FrameIndex frame, bool block) {
    const auto t0 = Clock::now();
    SubgraphSnapshot snapshot = graph.extract_subgraph(map, graph.flag_for_prediction(map, frame), frame);
    map_report.add("subgraph", ms_since(t0));
    if (snapshot.empty() && pending.removed.empty() && pending.edges.empty()) return true;
    Job job{snapshot, pending.removed, pending.edges};
    if (!async) {
      worker.process(job);
    } else if (block) {
      queue.push(std::move(job));
    } else if (!queue.try_push(std::move(job))) {
      return false;
    }
    pending = Job{};
    if (!snapshot.empty()) graph.commit(snapshot, map);
    return true;
  };

  try {
    for (const auto& update : frames) {
      const auto frame_start = Clock::now();
      auto t0 = Clock::now();
      const FrameDelta delta = map.apply_frame(update);
      map_report.add("segmentation", ms_since(t0));
      t0 = Clock::now();
      const EdgeDelta edges = graph.update(map, delta);
      map_report.add("graph_update", ms_since(t0));
      pending.removed.insert(pending.removed.end(), delta.removed.begin(), delta.removed.end());
      for (const auto& e : edges.removed) pending.edges[e] = false;
      for (const auto& e : edges.added) pending.edges[e] = true;
      if (!flag_and_send(update.frame, false)) ++map_report.coalesced_frames;
      map_report.add("frame", ms_since(frame_start));
      ++map_report.frames;
    }
    // Drain barrier: keep sending until nothing is flagged and no removal is pending.
    if (!frames.empty()) {
      const FrameIndex last = map.current_frame();
      for (int guard = 0; guard < 1 << 20; ++guard) {
        const auto flagged = graph.flag_for_prediction(map, last);
        if (flagged.empty() && pending.removed.empty() && pending.edges.empty()) break;
        flag_and_send(last, true);
      }
    }
  } catch (...) {
    if (async) {
      queue.close();
      thread.join();
    }
    throw;
  }
  if (async) {
    queue.close();
    thread.join();
    if (worker_error) std::rethrow_exception(worker_error);
  }

  PipelineResult r{std::move(worker.fused()), std::move(worker.report()), std::move(map)};
  for (auto& [name, s] : map_report.stages) r.report.stages[name] = std::move(s);
  r.report.frames = map_report.frames;
  r.report.coalesced_frames = map_report.coalesced_frames;
  return r;
}

std::vector<LabeledScene> generate_dataset(int count, std::uint64_t seed, const RoomOptions& options,
                                           const Vocabulary& vocab) {
  std::vector<LabeledScene> out;
  for (int i = 0; i < count; ++i) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(i)};
    std::mt19937_64 rng(seq);
    const SceneSpec layout = random_room(rng, options);
    GeneratedScene g = generate_scene(layout, rng, vocab);
    out.push_back({std::move(g.frames), std::move(g.truth)});
  }
  return out;
}

void write_dataset(const std::string& dir, std::span<const LabeledScene> scenes, int first) {
  std::filesystem::create_directories(dir);
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "scene_%03d", first + static_cast<int>(i));
    const auto base = std::filesystem::path(dir) / name;
    write_stream_file(base.string() + ".jsonl", scenes[i].frames);
    write_ground_truth(base.string() + ".gt.json", scenes[i].truth);
  }
}

std::vector<LabeledScene> read_dataset(const std::string& dir) {
  if (!std::filesystem::is_directory(dir)) throw DataError("not a directory: " + dir);
  std::vector<std::filesystem::path> streams;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    const auto name = e.path().filename().string();
    if (name.starts_with("scene_") && e.path().extension() == ".jsonl") streams.push_back(e.path());
  }
  std::sort(streams.begin(), streams.end());
  std::vector<LabeledScene> out;
  for (const auto& p : streams) {
    auto gt_path = p;
    gt_path.replace_extension(".gt.json");
    out.push_back({read_stream_file(p.string()), read_ground_truth(gt_path.string())});
  }
  return out;
}

std::vector<TrainingScene> training_scenes(std::span<const LabeledScene> scenes, const Vocabulary& vocab,
                                           const GraphConfig& graph) {
  std::vector<TrainingScene> out;
  for (const auto& s : scenes) out.push_back(reconstruct(s.frames, s.truth, vocab, graph).scene);
  return out;
}

namespace {

Eigen::RowVectorXd uniform_row(int n) { return Eigen::RowVectorXd::Constant(n, 1.0 / n); }

}  // namespace

EvalReport evaluate(std::span<const LabeledScene> scenes, const SpnParameters& params, const PipelineConfig& config,
                    const Vocabulary& vocab, std::vector<SceneOutcome>* outcomes) {
  PipelineConfig sync = config;
  sync.mode = WorkerMode::Sync;
  const int C = params.config.num_classes;
  const int P = params.config.num_predicates;
  const std::vector<int> object_ks{1, 3}, predicate_ks{1, 2}, relationship_ks{1, 5, 20, 50};

  EvalReport report;
  report.classes = vocab.classes;
  report.predicates = vocab.predicates;
  for (int k : object_ks) report.object_recall.push_back({k, {}});
  for (int k : predicate_ks) report.predicate_recall.push_back({k, {}});
  for (int k : relationship_ks) report.relationship_recall.push_back({k, {}});

  std::vector<int> node_pred, node_true, edge_pred, edge_true;
  std::vector<int> nn_pred, skip_pred, point_true;
  std::vector<PqReport> pq;

  for (const auto& scene : scenes) {
    SceneOutcome out{run_pipeline(scene.frames, params, sync),
                     reconstruct(scene.frames, scene.truth, vocab, sync.graph)};
    const FusedSceneGraph& fused = out.pipeline.graph;
    const TrainingScene& ts = out.reconstruction.scene;

    RecallInput in;
    in.node_probabilities.resize(static_cast<Eigen::Index>(ts.segments.size()), C);
    std::map<SegmentId, int> index;
    for (std::size_t i = 0; i < ts.segments.size(); ++i) {
      const auto& s = ts.segments[i];
      index[s.id] = static_cast<int>(i);
      auto it = fused.nodes().find(s.id);
      in.node_probabilities.row(static_cast<Eigen::Index>(i)) =
          it == fused.nodes().end() ? uniform_row(C) : Eigen::RowVectorXd(it->second.classes.probabilities.transpose());
      in.node_labels.push_back(s.label);
      node_true.push_back(s.label);
      Eigen::Index arg = 0;
      in.node_probabilities.row(static_cast<Eigen::Index>(i)).maxCoeff(&arg);
      node_pred.push_back(it == fused.nodes().end() ? -1 : static_cast<int>(arg));
    }
    for (const auto& [e, label] : ts.edge_labels) {
      in.edges.emplace_back(index.at(e.first), index.at(e.second));
      in.edge_labels.push_back(label);
    }
    in.edge_probabilities.resize(static_cast<Eigen::Index>(in.edges.size()), P);
    std::size_t row = 0;
    for (const auto& [e, label] : ts.edge_labels) {
      auto it = fused.edges().find(e);
      in.edge_probabilities.row(static_cast<Eigen::Index>(row)) =
          it == fused.edges().end() ? uniform_row(P) : Eigen::RowVectorXd(it->second.probabilities.transpose());
      Eigen::Index arg = 0;
      in.edge_probabilities.row(static_cast<Eigen::Index>(row)).maxCoeff(&arg);
      edge_pred.push_back(it == fused.edges().end() ? -1 : static_cast<int>(arg));
      edge_true.push_back(label);
      ++row;
    }
    auto add_recall = [&](std::vector<std::pair<int, RecallResult>>& into, RecallMode mode) {
      for (auto& [k, acc] : into) {
        const auto r = recall_at_k(in, k, mode, kNonePredicate);
        acc.hits += r.hits;
        acc.total += r.total;
      }
    };
    add_recall(report.object_recall, RecallMode::Object);
    add_recall(report.predicate_recall, RecallMode::Predicate);
    add_recall(report.relationship_recall, RecallMode::Relationship);

    // Point-level labels: every reconstructed point carries its segment's fused class
    // and instance.
    const auto instance_of = fused.instance_of();
    std::map<SegmentId, int> instance_label;
    for (const auto& inst : fused.cluster_instances()) instance_label[inst.id] = inst.label;
    std::vector<Vec3> recon_points;
    std::vector<int> recon_class, recon_instance, recon_panoptic_class;
    for (const auto& [id, seg] : out.pipeline.map.segments()) {
      auto node = fused.nodes().find(id);
      const int cls = node == fused.nodes().end() ? -1 : node->second.classes.argmax();
      const auto inst = instance_of.find(id);
      const int inst_id = inst == instance_of.end() ? -1 : static_cast<int>(inst->second);
      const int inst_cls = inst == instance_of.end() ? -1 : instance_label.at(inst->second);
      for (const auto& p : seg.points) {
        recon_points.push_back(p.position);
        recon_class.push_back(cls);
        recon_instance.push_back(inst_id);
        recon_panoptic_class.push_back(inst_cls);
      }
    }
    const auto& gt = scene.truth;
    const auto nn = transfer_labels(gt.points, recon_points, recon_class, MissingPoints::NearestNeighbor);
    const auto skip = transfer_labels(gt.points, recon_points, recon_class, MissingPoints::Skip);
    nn_pred.insert(nn_pred.end(), nn.begin(), nn.end());
    skip_pred.insert(skip_pred.end(), skip.begin(), skip.end());
    point_true.insert(point_true.end(), gt.label.begin(), gt.label.end());

    PanopticLabels pred{transfer_labels(gt.points, recon_points, recon_instance, MissingPoints::NearestNeighbor),
                        transfer_labels(gt.points, recon_points, recon_panoptic_class,
                                        MissingPoints::NearestNeighbor)};
    PanopticLabels truth{gt.instance, gt.label};
    pq.push_back(panoptic_quality(pred, truth, gt.stuff));

    if (outcomes) outcomes->push_back(std::move(out));
    ++report.scenes;
  }

  report.node_accuracy = accuracy(node_pred, node_true, C);
  report.edge_accuracy = accuracy(edge_pred, edge_true, P);
  report.point_iou_nn = iou_report(nn_pred, point_true, C);
  report.point_iou_skip = iou_report(skip_pred, point_true, C);
  std::vector<int> seg_pred, seg_true;
  for (std::size_t i = 0; i < node_true.size(); ++i) {
    seg_pred.push_back(node_true[i] < 0 ? kSkippedPoint : node_pred[i]);
    seg_true.push_back(node_true[i] < 0 ? kSkippedPoint : node_true[i]);
  }
  report.segment_iou = iou_report(seg_pred, seg_true, C);
  report.panoptic = combine(pq);
  return report;
}

}  // namespace sgf
