#include "sgf/tape.hpp"

#include <cmath>

namespace sgf::ad {

const Mat& Var::value() const { return tape->value(id); }

Var Tape::constant(Mat value) {
  Node n;
  n.owned = std::move(value);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::parameter(const Mat& value) {
  Node n;
  n.external = &value;
  n.tracks = true;
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::record(Mat value, std::vector<int> inputs, std::function<void(Tape&, int)> backward) {
  Node n;
  n.owned = std::move(value);
  for (int i : inputs) n.tracks = n.tracks || nodes_[static_cast<std::size_t>(i)].tracks;
  if (n.tracks) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return {this, static_cast<int>(nodes_.size()) - 1};
}

const Mat& Tape::value(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.external ? *n.external : n.owned;
}

const Mat* Tape::grad(int id) const {
  const Node& n = nodes_[static_cast<std::size_t>(id)];
  return n.has_grad ? &n.grad : nullptr;
}

Mat& Tape::grad_buffer(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.has_grad) {
    const Mat& v = value(id);
    n.grad = Mat::Zero(v.rows(), v.cols());
    n.has_grad = true;
  }
  return n.grad;
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1) throw std::logic_error("backward: loss must be 1x1");
  grad_buffer(loss.id)(0, 0) += 1.0;
  for (int id = loss.id; id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.has_grad && n.backward) n.backward(*this, id);
  }
}

namespace {

// Accumulates into input `i` only when it participates in differentiation.
template <typename F>
void flow(Tape& t, int i, F&& f) {
  if (t.tracks(i)) f(t.grad_buffer(i));
}

}  // namespace

Var matmul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() * b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, a, [&](Mat& ga) { ga.noalias() += g * t.value(b).transpose(); });
    flow(t, b, [&](Mat& gb) { gb.noalias() += t.value(a).transpose() * g; });
  });
}

Var linear(Var x, Var weight, Var bias) {
  Tape& t = *x.tape;
  Mat y = x.value() * weight.value();
  y.rowwise() += bias.value().row(0);
  return t.record(std::move(y), {x.id, weight.id, bias.id},
                  [x = x.id, w = weight.id, b = bias.id](Tape& t, int self) {
                    const Mat& g = *t.grad(self);
                    flow(t, x, [&](Mat& gx) { gx.noalias() += g * t.value(w).transpose(); });
                    flow(t, w, [&](Mat& gw) { gw.noalias() += t.value(x).transpose() * g; });
                    flow(t, b, [&](Mat& gb) { gb.row(0) += g.colwise().sum(); });
                  });
}

Var relu(Var x) {
  Tape& t = *x.tape;
  return t.record(x.value().cwiseMax(0.0), {x.id}, [x = x.id](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, x, [&](Mat& gx) { gx += (t.value(x).array() > 0.0).select(g, 0.0).matrix(); });
  });
}

Var add(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value() + b.value(), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, a, [&](Mat& ga) { ga += g; });
    flow(t, b, [&](Mat& gb) { gb += g; });
  });
}

Var scale(Var a, double s) {
  Tape& t = *a.tape;
  return t.record(a.value() * s, {a.id}, [a = a.id, s](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, a, [&](Mat& ga) { ga += g * s; });
  });
}

Var mul(Var a, Var b) {
  Tape& t = *a.tape;
  return t.record(a.value().cwiseProduct(b.value()), {a.id, b.id}, [a = a.id, b = b.id](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, a, [&](Mat& ga) { ga += g.cwiseProduct(t.value(b)); });
    flow(t, b, [&](Mat& gb) { gb += g.cwiseProduct(t.value(a)); });
  });
}

Var concat_cols(std::span<const Var> parts) {
  Tape& t = *parts.front().tape;
  const Eigen::Index rows = parts.front().rows();
  Eigen::Index cols = 0;
  std::vector<int> ids;
  std::vector<Eigen::Index> widths;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw std::logic_error("concat_cols: row mismatch");
    cols += p.cols();
    ids.push_back(p.id);
    widths.push_back(p.cols());
  }
  Mat out(rows, cols);
  Eigen::Index c = 0;
  for (const Var& p : parts) {
    out.middleCols(c, p.cols()) = p.value();
    c += p.cols();
  }
  return t.record(std::move(out), ids, [ids, widths](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    Eigen::Index c = 0;
    for (std::size_t k = 0; k < ids.size(); ++k) {
      flow(t, ids[k], [&](Mat& gp) { gp += g.middleCols(c, widths[k]); });
      c += widths[k];
    }
  });
}

Var slice_cols(Var x, Eigen::Index start, Eigen::Index count) {
  Tape& t = *x.tape;
  return t.record(x.value().middleCols(start, count), {x.id}, [x = x.id, start, count](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, x, [&](Mat& gx) { gx.middleCols(start, count) += g; });
  });
}

Var gather_rows(Var x, std::span<const int> index) {
  Tape& t = *x.tape;
  const Mat& v = x.value();
  Mat out(static_cast<Eigen::Index>(index.size()), v.cols());
  for (std::size_t k = 0; k < index.size(); ++k) out.row(static_cast<Eigen::Index>(k)) = v.row(index[k]);
  std::vector<int> idx(index.begin(), index.end());
  return t.record(std::move(out), {x.id}, [x = x.id, idx = std::move(idx)](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, x, [&](Mat& gx) {
      for (std::size_t k = 0; k < idx.size(); ++k) gx.row(idx[k]) += g.row(static_cast<Eigen::Index>(k));
    });
  });
}

Var softmax_rows(Var x) {
  Tape& t = *x.tape;
  const Mat& v = x.value();
  Mat y(v.rows(), v.cols());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const double m = v.row(r).maxCoeff();
    y.row(r) = (v.row(r).array() - m).exp().matrix();
    y.row(r) /= y.row(r).sum();
  }
  return t.record(std::move(y), {x.id}, [x = x.id](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    const Mat& y = t.value(self);
    flow(t, x, [&](Mat& gx) {
      const Eigen::VectorXd dot = g.cwiseProduct(y).rowwise().sum();
      gx += y.cwiseProduct(g - dot.replicate(1, g.cols()));
    });
  });
}

Var segment_max(Var x, std::span<const int> group, int groups) {
  Tape& t = *x.tape;
  const Mat& v = x.value();
  Mat out = Mat::Zero(groups, v.cols());
  Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> arg =
      Eigen::Matrix<int, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>::Constant(groups, v.cols(), -1);
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    const int g = group[static_cast<std::size_t>(r)];
    for (Eigen::Index c = 0; c < v.cols(); ++c) {
      if (arg(g, c) < 0 || v(r, c) > out(g, c)) {
        out(g, c) = v(r, c);
        arg(g, c) = static_cast<int>(r);
      }
    }
  }
  return t.record(std::move(out), {x.id}, [x = x.id, arg = std::move(arg)](Tape& t, int self) {
    const Mat& g = *t.grad(self);
    flow(t, x, [&](Mat& gx) {
      for (Eigen::Index r = 0; r < arg.rows(); ++r)
        for (Eigen::Index c = 0; c < arg.cols(); ++c)
          if (arg(r, c) >= 0) gx(arg(r, c), c) += g(r, c);
    });
  });
}

Var cross_entropy(Var logits, std::span<const int> labels, Reduction reduction) {
  Tape& t = *logits.tape;
  const Mat& z = logits.value();
  if (static_cast<Eigen::Index>(labels.size()) != z.rows()) throw std::logic_error("cross_entropy: label count");
  Mat prob(z.rows(), z.cols());
  double total = 0.0;
  int valid = 0;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    const double m = z.row(r).maxCoeff();
    const double lse = m + std::log((z.row(r).array() - m).exp().sum());
    prob.row(r) = (z.row(r).array() - lse).exp().matrix();
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0) continue;
    total += lse - z(r, y);
    ++valid;
  }
  const double denom = (reduction == Reduction::Mean && valid > 0) ? static_cast<double>(valid) : 1.0;
  Mat out(1, 1);
  out(0, 0) = total / denom;
  std::vector<int> y(labels.begin(), labels.end());
  return t.record(std::move(out), {logits.id},
                  [x = logits.id, prob = std::move(prob), y = std::move(y), denom](Tape& t, int self) {
                    const double g = (*t.grad(self))(0, 0);
                    flow(t, x, [&](Mat& gx) {
                      for (Eigen::Index r = 0; r < prob.rows(); ++r) {
                        const int label = y[static_cast<std::size_t>(r)];
                        if (label < 0) continue;
                        gx.row(r) += prob.row(r) * (g / denom);
                        gx(r, label) -= g / denom;
                      }
                    });
                  });
}

}  // namespace sgf::ad
