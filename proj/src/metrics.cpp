#include "sgf/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "sgf/point_grid.hpp"

namespace sgf {

std::size_t rank_of(const Eigen::Ref<const Eigen::RowVectorXd>& scores, int index) {
  const double s = scores(index);
  std::size_t r = 0;
  for (Eigen::Index j = 0; j < scores.size(); ++j)
    if (scores(j) > s || (scores(j) == s && j < index)) ++r;
  return r;
}

RecallResult recall_at_k(const RecallInput& in, int k, RecallMode mode, int skip_predicate) {
  if (k < 1) throw ConfigError("recall_at_k: k must be >= 1");
  const auto kk = static_cast<std::size_t>(k);
  RecallResult r;
  switch (mode) {
    case RecallMode::Object:
      for (std::size_t i = 0; i < in.node_labels.size(); ++i) {
        if (in.node_labels[i] < 0) continue;
        ++r.total;
        if (rank_of(in.node_probabilities.row(static_cast<Eigen::Index>(i)), in.node_labels[i]) < kk) ++r.hits;
      }
      break;
    case RecallMode::Predicate:
      for (std::size_t e = 0; e < in.edge_labels.size(); ++e) {
        if (in.edge_labels[e] < 0) continue;
        ++r.total;
        if (rank_of(in.edge_probabilities.row(static_cast<Eigen::Index>(e)), in.edge_labels[e]) < kk) ++r.hits;
      }
      break;
    case RecallMode::Relationship: {
      const Eigen::Index c = in.node_probabilities.cols();
      const Eigen::Index p = in.edge_probabilities.cols();
      for (std::size_t e = 0; e < in.edges.size(); ++e) {
        const auto [s, o] = in.edges[e];
        const int ls = in.node_labels[static_cast<std::size_t>(s)];
        const int lo = in.node_labels[static_cast<std::size_t>(o)];
        const int lp = in.edge_labels[e];
        if (ls < 0 || lo < 0 || lp < 0 || lp == skip_predicate) continue;
        ++r.total;
        const auto ps = in.node_probabilities.row(s);
        const auto po = in.node_probabilities.row(o);
        const auto pp = in.edge_probabilities.row(static_cast<Eigen::Index>(e));
        const double target = ps(ls) * po(lo) * pp(lp);
        const Eigen::Index target_flat = (ls * c + lo) * p + lp;
        std::size_t rank = 0;
        for (Eigen::Index a = 0; a < c && rank < kk; ++a)
          for (Eigen::Index b = 0; b < c && rank < kk; ++b)
            for (Eigen::Index q = 0; q < p && rank < kk; ++q) {
              const double v = ps(a) * po(b) * pp(q);
              if (v > target || (v == target && (a * c + b) * p + q < target_flat)) ++rank;
            }
        if (rank < kk) ++r.hits;
      }
      break;
    }
  }
  return r;
}

std::optional<double> class_iou(std::span<const int> pred, std::span<const int> gt, int c) {
  if (pred.size() != gt.size()) throw DataError("class_iou: label arrays differ in length");
  std::size_t inter = 0, uni = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == kSkippedPoint || gt[i] == kSkippedPoint) continue;
    const bool a = pred[i] == c, b = gt[i] == c;
    inter += a && b;
    uni += a || b;
  }
  if (uni == 0) return std::nullopt;
  return static_cast<double>(inter) / static_cast<double>(uni);
}

IouReport iou_report(std::span<const int> pred, std::span<const int> gt, int num_classes) {
  IouReport r;
  double sum = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    r.per_class.push_back(class_iou(pred, gt, c));
    bool present = false;
    for (std::size_t i = 0; i < gt.size() && !present; ++i) present = gt[i] == c && pred[i] != kSkippedPoint;
    if (present && r.per_class.back()) {
      sum += *r.per_class.back();
      ++r.classes_in_mean;
    }
  }
  r.mean = r.classes_in_mean > 0 ? sum / r.classes_in_mean : 0.0;
  return r;
}

std::vector<int> transfer_labels(std::span<const Vec3> gt_points, std::span<const Vec3> recon_points,
                                 std::span<const int> recon_labels, MissingPoints mode, double radius) {
  if (recon_points.size() != recon_labels.size()) throw DataError("transfer_labels: size mismatch");
  std::vector<int> out(gt_points.size(), mode == MissingPoints::Skip ? kSkippedPoint : -1);
  if (recon_points.empty()) return out;
  const PointGrid grid(recon_points, std::max(radius, 1e-3));
  for (std::size_t i = 0; i < gt_points.size(); ++i) {
    const int nn = mode == MissingPoints::Skip ? grid.nearest(gt_points[i], radius) : grid.nearest(gt_points[i]);
    if (nn >= 0) out[i] = recon_labels[static_cast<std::size_t>(nn)];
  }
  return out;
}

namespace {

struct SegmentKey {
  int label;
  int instance;  // -1 for stuff
  auto operator<=>(const SegmentKey&) const = default;
};

std::vector<int> segment_ids(const PanopticLabels& l, const std::set<int>& stuff, std::vector<SegmentKey>& keys) {
  std::map<SegmentKey, int> index;
  std::vector<int> out(l.label.size(), -1);
  for (std::size_t i = 0; i < l.label.size(); ++i) {
    if (l.label[i] < 0) continue;
    const SegmentKey k{l.label[i], stuff.contains(l.label[i]) ? -1 : l.instance[i]};
    auto [it, fresh] = index.try_emplace(k, static_cast<int>(keys.size()));
    if (fresh) keys.push_back(k);
    out[i] = it->second;
  }
  return out;
}

PqSummary summarize(const std::vector<PqStats>& stats, int which) {
  PqSummary s;
  for (const auto& c : stats) {
    if (which == 1 && c.stuff) continue;
    if (which == 2 && !c.stuff) continue;
    s.pq += c.pq;
    s.sq += c.sq;
    s.rq += c.rq;
    ++s.classes;
  }
  if (s.classes > 0) {
    s.pq /= s.classes;
    s.sq /= s.classes;
    s.rq /= s.classes;
  }
  return s;
}

void finish(PqReport& r, std::map<int, PqStats>& by_class) {
  std::size_t tp = 0, fp = 0, fn = 0;
  double iou_sum = 0.0;
  for (auto& [label, s] : by_class) {
    s.sq = s.tp > 0 ? s.iou_sum / static_cast<double>(s.tp) : 0.0;
    s.rq = static_cast<double>(s.tp) / (static_cast<double>(s.tp) + 0.5 * static_cast<double>(s.fp + s.fn));
    s.pq = s.sq * s.rq;
    tp += s.tp;
    fp += s.fp;
    fn += s.fn;
    iou_sum += s.iou_sum;
    r.classes.push_back(s);
  }
  r.all = summarize(r.classes, 0);
  r.things = summarize(r.classes, 1);
  r.stuff = summarize(r.classes, 2);
  if (!r.classes.empty()) {
    r.pooled.sq = tp > 0 ? iou_sum / static_cast<double>(tp) : 0.0;
    r.pooled.rq = static_cast<double>(tp) / (static_cast<double>(tp) + 0.5 * static_cast<double>(fp + fn));
    r.pooled.pq = r.pooled.sq * r.pooled.rq;
    r.pooled.classes = static_cast<int>(r.classes.size());
  }
}

}  // namespace

PqReport panoptic_quality(const PanopticLabels& pred, const PanopticLabels& gt, const std::set<int>& stuff) {
  const std::size_t n = gt.label.size();
  if (pred.label.size() != n || pred.instance.size() != n || gt.instance.size() != n)
    throw DataError("panoptic_quality: label arrays differ in length");
  std::vector<SegmentKey> pkeys, gkeys;
  const auto pseg = segment_ids(pred, stuff, pkeys);
  const auto gseg = segment_ids(gt, stuff, gkeys);
  std::vector<std::size_t> psize(pkeys.size(), 0), gsize(gkeys.size(), 0);
  std::map<std::pair<int, int>, std::size_t> inter;
  for (std::size_t i = 0; i < n; ++i) {
    if (pseg[i] >= 0) ++psize[static_cast<std::size_t>(pseg[i])];
    if (gseg[i] >= 0) ++gsize[static_cast<std::size_t>(gseg[i])];
    if (pseg[i] >= 0 && gseg[i] >= 0) ++inter[{pseg[i], gseg[i]}];
  }

  std::map<int, PqStats> by_class;
  for (const auto& k : pkeys) by_class[k.label].label = k.label;
  for (const auto& k : gkeys) by_class[k.label].label = k.label;
  std::vector<bool> pmatched(pkeys.size(), false), gmatched(gkeys.size(), false);
  PqReport r;
  for (const auto& [key, count] : inter) {
    const auto [p, g] = key;
    if (pkeys[static_cast<std::size_t>(p)].label != gkeys[static_cast<std::size_t>(g)].label) continue;
    const double uni = static_cast<double>(psize[static_cast<std::size_t>(p)] + gsize[static_cast<std::size_t>(g)] - count);
    const double iou = static_cast<double>(count) / uni;
    if (iou <= 0.5) continue;
    if (pmatched[static_cast<std::size_t>(p)] || gmatched[static_cast<std::size_t>(g)])
      throw std::logic_error("panoptic_quality: segment matched twice");
    pmatched[static_cast<std::size_t>(p)] = gmatched[static_cast<std::size_t>(g)] = true;
    auto& s = by_class[gkeys[static_cast<std::size_t>(g)].label];
    ++s.tp;
    s.iou_sum += iou;
    r.matches.emplace_back(p, g);
  }
  for (std::size_t p = 0; p < pkeys.size(); ++p)
    if (!pmatched[p]) ++by_class[pkeys[p].label].fp;
  for (std::size_t g = 0; g < gkeys.size(); ++g)
    if (!gmatched[g]) ++by_class[gkeys[g].label].fn;

  for (auto& [label, s] : by_class) s.stuff = stuff.contains(label);
  finish(r, by_class);
  return r;
}

PqReport combine(std::span<const PqReport> reports) {
  std::map<int, PqStats> by_class;
  for (const auto& rep : reports)
    for (const auto& c : rep.classes) {
      auto& s = by_class[c.label];
      s.label = c.label;
      s.stuff = c.stuff;
      s.tp += c.tp;
      s.fp += c.fp;
      s.fn += c.fn;
      s.iou_sum += c.iou_sum;
    }
  PqReport r;
  finish(r, by_class);
  return r;
}

Accuracy accuracy(std::span<const int> predicted, std::span<const int> labels, int num_labels) {
  if (predicted.size() != labels.size()) throw DataError("accuracy: size mismatch");
  Accuracy a;
  std::vector<std::size_t> counts(static_cast<std::size_t>(std::max(num_labels, 0)), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0) continue;
    if (labels[i] >= num_labels) throw DataError("accuracy: label outside vocabulary");
    ++a.total;
    a.correct += predicted[i] == labels[i];
    ++counts[static_cast<std::size_t>(labels[i])];
  }
  for (int c = 0; c < num_labels; ++c)
    if (counts[static_cast<std::size_t>(c)] > a.baseline_correct || a.baseline_label < 0) {
      a.baseline_correct = counts[static_cast<std::size_t>(c)];
      a.baseline_label = c;
    }
  return a;
}

namespace {

nlohmann::json summary_json(const PqSummary& s) {
  return {{"pq", s.pq}, {"sq", s.sq}, {"rq", s.rq}, {"classes", s.classes}};
}

nlohmann::json iou_json(const IouReport& r, const std::vector<std::string>& names) {
  nlohmann::json per = nlohmann::json::object();
  for (std::size_t c = 0; c < r.per_class.size(); ++c)
    per[c < names.size() ? names[c] : std::to_string(c)] = r.per_class[c] ? nlohmann::json(*r.per_class[c]) : nullptr;
  return {{"mean", r.mean}, {"classes_in_mean", r.classes_in_mean}, {"per_class", per}};
}

nlohmann::json recall_json(const std::vector<std::pair<int, RecallResult>>& rs) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, r] : rs) out["R@" + std::to_string(k)] = {{"value", r.value()}, {"hits", r.hits}, {"total", r.total}};
  return out;
}

nlohmann::json accuracy_json(const Accuracy& a) {
  return {{"accuracy", a.value()}, {"baseline", a.baseline()}, {"baseline_label", a.baseline_label}, {"total", a.total}};
}

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", *v);
  return buf;
}

}  // namespace

nlohmann::json to_json(const EvalReport& r) {
  nlohmann::json pq_classes = nlohmann::json::array();
  for (const auto& c : r.panoptic.classes)
    pq_classes.push_back({{"class", static_cast<std::size_t>(c.label) < r.classes.size()
                                        ? r.classes[static_cast<std::size_t>(c.label)]
                                        : std::to_string(c.label)},
                          {"stuff", c.stuff},
                          {"tp", c.tp},
                          {"fp", c.fp},
                          {"fn", c.fn},
                          {"pq", c.pq},
                          {"sq", c.sq},
                          {"rq", c.rq}});
  return {{"scenes", r.scenes},
          {"recall",
           {{"object", recall_json(r.object_recall)},
            {"predicate", recall_json(r.predicate_recall)},
            {"relationship", recall_json(r.relationship_recall)}}},
          {"accuracy", {{"node", accuracy_json(r.node_accuracy)}, {"edge", accuracy_json(r.edge_accuracy)}}},
          {"iou",
           {{"points_nn_mapping", iou_json(r.point_iou_nn, r.classes)},
            {"points_skip_missing", iou_json(r.point_iou_skip, r.classes)},
            {"segments", iou_json(r.segment_iou, r.classes)}}},
          {"panoptic",
           {{"all", summary_json(r.panoptic.all)},
            {"things", summary_json(r.panoptic.things)},
            {"stuff", summary_json(r.panoptic.stuff)},
            {"pooled", summary_json(r.panoptic.pooled)},
            {"per_class", pq_classes}}}};
}

std::string per_class_csv(const EvalReport& r) {
  std::string out = "class,stuff,iou_nn,iou_skip,iou_segment,pq,sq,rq,tp,fp,fn\n";
  for (std::size_t c = 0; c < r.classes.size(); ++c) {
    const PqStats* s = nullptr;
    for (const auto& p : r.panoptic.classes)
      if (p.label == static_cast<int>(c)) s = &p;
    auto at = [&](const IouReport& i) { return c < i.per_class.size() ? fmt_opt(i.per_class[c]) : std::string(); };
    out += r.classes[c] + ',' + (s && s->stuff ? "1" : "0") + ',' + at(r.point_iou_nn) + ',' + at(r.point_iou_skip) +
           ',' + at(r.segment_iou) + ',';
    if (s) {
      out += fmt_opt(s->pq) + ',' + fmt_opt(s->sq) + ',' + fmt_opt(s->rq) + ',' + std::to_string(s->tp) + ',' +
             std::to_string(s->fp) + ',' + std::to_string(s->fn);
    } else {
      out += ",,,,,";
    }
    out += '\n';
  }
  return out;
}

}  // namespace sgf
