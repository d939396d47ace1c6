#include "sgf/point_grid.hpp"

#include <algorithm>
#include <cmath>

namespace sgf {

PointGrid::PointGrid(std::span<const Vec3> points, double cell) : points_(points.begin(), points.end()), cell_(cell) {
  if (!(cell > 0.0)) throw ConfigError("PointGrid: cell size must be positive");
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const auto x = coord(points_[i].x()), y = coord(points_[i].y()), z = coord(points_[i].z());
    span_ = std::max({span_, std::abs(x), std::abs(y), std::abs(z)});
    cells_[key(x, y, z)].push_back(static_cast<int>(i));
  }
}

std::int64_t PointGrid::coord(double v) const { return static_cast<std::int64_t>(std::floor(v / cell_)); }

PointGrid::Key PointGrid::key(std::int64_t x, std::int64_t y, std::int64_t z) const {
  constexpr std::int64_t kBias = 1 << 20;
  return ((x + kBias) << 42) ^ ((y + kBias) << 21) ^ (z + kBias);
}

int PointGrid::nearest(const Vec3& q, double max_radius) const {
  if (points_.empty()) return -1;
  const auto cx = coord(q.x()), cy = coord(q.y()), cz = coord(q.z());
  const std::int64_t reach = std::max({std::abs(cx), std::abs(cy), std::abs(cz)}) + span_ + 1;
  const std::int64_t limit =
      std::isfinite(max_radius) ? std::min<std::int64_t>(reach, static_cast<std::int64_t>(std::ceil(max_radius / cell_)))
                                : reach;
  int best = -1;
  double best_d2 = max_radius * max_radius;
  for (std::int64_t ring = 0; ring <= limit; ++ring) {
    // Points in shells beyond `ring` are at least (ring - 1) * cell away.
    if (best >= 0 && ring >= 2) {
      const double floor_d = static_cast<double>(ring - 1) * cell_;
      if (floor_d * floor_d > best_d2) break;
    }
    for (std::int64_t dx = -ring; dx <= ring; ++dx)
      for (std::int64_t dy = -ring; dy <= ring; ++dy)
        for (std::int64_t dz = -ring; dz <= ring;
             dz += (std::max(std::abs(dx), std::abs(dy)) == ring || dz == ring) ? 1 : 2 * ring) {
          auto it = cells_.find(key(cx + dx, cy + dy, cz + dz));
          if (it == cells_.end()) continue;
          for (int i : it->second) {
            const double d2 = (points_[static_cast<std::size_t>(i)] - q).squaredNorm();
            if (d2 < best_d2 || (d2 == best_d2 && i < best) || (best < 0 && d2 <= best_d2)) {
              best_d2 = d2;
              best = i;
            }
          }
        }
  }
  return best;
}

}  // namespace sgf
