#pragma once

#include <algorithm>
#include <iterator>
#include <optional>
#include <map>
#include <set>
#include <tuple>
#include <vector>

#include "sgf/common.hpp"

namespace sgf::oracle {

/// IoU of class c from explicit index sets.
inline std::optional<double> iou(const std::vector<int>& pred, const std::vector<int>& gt, int c) {
  std::set<std::size_t> p, g, uni, inter;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == -2 || gt[i] == -2) continue;
    if (pred[i] == c) p.insert(i);
    if (gt[i] == c) g.insert(i);
  }
  std::set_union(p.begin(), p.end(), g.begin(), g.end(), std::inserter(uni, uni.end()));
  std::set_intersection(p.begin(), p.end(), g.begin(), g.end(), std::inserter(inter, inter.end()));
  if (uni.empty()) return std::nullopt;
  return static_cast<double>(inter.size()) / static_cast<double>(uni.size());
}

struct ClassPq {
  double pq = 0, sq = 0, rq = 0;
  int tp = 0, fp = 0, fn = 0;
};

/// Panoptic quality by comparing every predicted segment with every GT segment.
inline std::map<int, ClassPq> panoptic(const std::vector<int>& pred_inst, const std::vector<int>& pred_label,
                                       const std::vector<int>& gt_inst, const std::vector<int>& gt_label,
                                       const std::set<int>& stuff) {
  auto segments = [&](const std::vector<int>& inst, const std::vector<int>& label) {
    std::map<std::pair<int, int>, std::set<std::size_t>> segs;
    for (std::size_t i = 0; i < label.size(); ++i) {
      if (label[i] < 0) continue;
      segs[{label[i], stuff.contains(label[i]) ? -1 : inst[i]}].insert(i);
    }
    return segs;
  };
  const auto ps = segments(pred_inst, pred_label), gs = segments(gt_inst, gt_label);
  std::map<int, ClassPq> out;
  std::map<int, double> iou_sum;
  std::set<std::pair<int, int>> pm, gm;
  for (const auto& [pk, pset] : ps) {
    out[pk.first];
    for (const auto& [gk, gset] : gs) {
      out[gk.first];
      if (pk.first != gk.first) continue;
      std::size_t inter = 0;
      for (std::size_t i : pset) inter += gset.contains(i);
      const double iou = static_cast<double>(inter) / static_cast<double>(pset.size() + gset.size() - inter);
      if (iou > 0.5) {
        ++out[pk.first].tp;
        iou_sum[pk.first] += iou;
        pm.insert(pk);
        gm.insert(gk);
      }
    }
  }
  for (const auto& [gk, _] : gs) out[gk.first];
  for (const auto& [pk, _] : ps)
    if (!pm.contains(pk)) ++out[pk.first].fp;
  for (const auto& [gk, _] : gs)
    if (!gm.contains(gk)) ++out[gk.first].fn;
  for (auto& [c, s] : out) {
    s.sq = s.tp > 0 ? iou_sum[c] / s.tp : 0.0;
    const double denom = s.tp + 0.5 * s.fp + 0.5 * s.fn;
    s.rq = denom > 0 ? s.tp / denom : 0.0;
    s.pq = s.sq * s.rq;
  }
  return out;
}

/// 0-based position of the GT triplet after sorting every (s, o, p) product
/// descending, ties in lexicographic order.
inline std::size_t triplet_rank(const Eigen::RowVectorXd& ps, const Eigen::RowVectorXd& po, const Eigen::RowVectorXd& pp,
                                int ls, int lo, int lp) {
  std::vector<std::tuple<double, int, int, int>> all;
  for (int a = 0; a < ps.size(); ++a)
    for (int b = 0; b < po.size(); ++b)
      for (int q = 0; q < pp.size(); ++q) all.emplace_back(ps(a) * po(b) * pp(q), a, b, q);
  std::stable_sort(all.begin(), all.end(), [](const auto& x, const auto& y) { return std::get<0>(x) > std::get<0>(y); });
  for (std::size_t i = 0; i < all.size(); ++i)
    if (std::get<1>(all[i]) == ls && std::get<2>(all[i]) == lo && std::get<3>(all[i]) == lp) return i;
  return all.size();
}

}  // namespace sgf::oracle
