#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Core>

namespace sgf {

using Vec3 = Eigen::Vector3d;
/// Row-major dense matrix. Rows index items (points, nodes, edges), columns index features.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using SegmentId = std::int64_t;
using FrameIndex = std::int64_t;

/// Ordered pair of segment ids. Used both for undirected keys (first < second)
/// and for directed edges (source, target).
using IdPair = std::pair<SegmentId, SegmentId>;

inline IdPair undirected(SegmentId a, SegmentId b) { return a < b ? IdPair{a, b} : IdPair{b, a}; }

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input data (streams, updates, files).
class DataError : public Error {
 public:
  using Error::Error;
};

/// NaN/Inf or otherwise invalid numeric state.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Invalid configuration or shape declaration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

void require_finite(const Mat& m, const char* what);

}  // namespace sgf
