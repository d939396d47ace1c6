#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <unordered_map>
#include <vector>

#include "sgf/common.hpp"

namespace sgf {

/// Uniform hash grid over a fixed point set for nearest-neighbor lookups.
class PointGrid {
 public:
  PointGrid(std::span<const Vec3> points, double cell);

  /// Index of the nearest point within `max_radius`, or -1. Ties go to the lower index.
  [[nodiscard]] int nearest(const Vec3& q, double max_radius = std::numeric_limits<double>::infinity()) const;
  [[nodiscard]] std::size_t size() const { return points_.size(); }

 private:
  using Key = std::int64_t;
  [[nodiscard]] Key key(std::int64_t x, std::int64_t y, std::int64_t z) const;
  [[nodiscard]] std::int64_t coord(double v) const;

  std::vector<Vec3> points_;
  double cell_;
  std::unordered_map<Key, std::vector<int>> cells_;
  std::int64_t span_ = 0;  // largest |cell coordinate| present
};

}  // namespace sgf
