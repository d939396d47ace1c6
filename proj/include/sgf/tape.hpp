#pragma once

#include <functional>
#include <span>
#include <vector>

#include "sgf/common.hpp"

namespace sgf::ad {

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  [[nodiscard]] const Mat& value() const;
  [[nodiscard]] Eigen::Index rows() const { return value().rows(); }
  [[nodiscard]] Eigen::Index cols() const { return value().cols(); }
};

/// Reverse-mode recorder for matrix-valued ops. Nodes are appended in
/// evaluation order, so replaying them backwards is a valid topological order.
class Tape {
 public:
  /// Leaf owning its value; gradients are tracked only if `requires_grad`.
  Var constant(Mat value);
  /// Leaf aliasing an external tensor (not copied). Must outlive the tape.
  Var parameter(const Mat& value);

  Var record(Mat value, std::vector<int> inputs, std::function<void(Tape&, int self)> backward);

  /// Seeds d(loss)/d(loss) = 1 for a 1x1 `loss` and propagates to every input.
  void backward(Var loss);

  [[nodiscard]] const Mat& value(int id) const;
  /// Accumulated gradient, or nullptr if nothing flowed into `id`.
  [[nodiscard]] const Mat* grad(int id) const;
  Mat& grad_buffer(int id);
  [[nodiscard]] bool tracks(int id) const { return nodes_[static_cast<std::size_t>(id)].tracks; }
  [[nodiscard]] std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat owned;
    const Mat* external = nullptr;
    Mat grad;
    bool has_grad = false;
    bool tracks = false;
    std::function<void(Tape&, int)> backward;
  };
  std::vector<Node> nodes_;
};

Var matmul(Var a, Var b);
/// x * W + b with b broadcast over rows.
Var linear(Var x, Var weight, Var bias);
Var relu(Var x);
Var add(Var a, Var b);
Var scale(Var a, double s);
Var mul(Var a, Var b);
Var concat_cols(std::span<const Var> parts);
Var slice_cols(Var x, Eigen::Index start, Eigen::Index count);
Var gather_rows(Var x, std::span<const int> index);
Var softmax_rows(Var x);
/// Elementwise max over rows sharing a group id; empty groups give zero rows.
/// Ties route the gradient to the lowest row index.
Var segment_max(Var x, std::span<const int> group, int groups);

enum class Reduction { Mean, Sum };
/// Cross-entropy of row-wise softmax(logits) against integer labels. Rows with
/// label -1 are ignored. Returns 1x1; zero valid rows give 0.
Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction = Reduction::Mean);

}  // namespace sgf::ad
