#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>

#include "helpers.hpp"
#include "sgf/tape.hpp"
#include "sgf/train.hpp"

using namespace sgf;
using sgf::testing::tiny_config;

namespace {

Mat random_mat(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c) {
  std::normal_distribution<double> n(0.0, 1.0);
  Mat m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

/// Central difference of a scalar function of one matrix.
Mat numeric_grad(const std::function<double(const Mat&)>& f, Mat x, double h = 1e-6) {
  Mat g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double v = x.data()[i];
    x.data()[i] = v + h;
    const double up = f(x);
    x.data()[i] = v - h;
    const double down = f(x);
    x.data()[i] = v;
    g.data()[i] = (up - down) / (2 * h);
  }
  return g;
}

double rel_err(const Mat& a, const Mat& b) {
  return (a - b).cwiseAbs().maxCoeff() / std::max(1e-8, a.cwiseAbs().maxCoeff() + b.cwiseAbs().maxCoeff());
}

TrainingScene chain_scene(std::mt19937_64& rng, int n) {
  TrainingScene s;
  for (int i = 1; i <= n; ++i) {
    TrainingSegment seg;
    seg.id = i;
    seg.points = sgf::testing::random_points(rng, 40, Vec3(0.6 * i, 0, 0), 0.5);
    seg.label = i % 3;
    s.segments.push_back(std::move(seg));
  }
  for (int i = 1; i < n; ++i) {
    s.edges.emplace_back(i, i + 1);
    s.edge_labels[{i, i + 1}] = 1 + (i % 3);
    s.edge_labels[{i + 1, i}] = 0;
  }
  return s;
}

GraphInput small_input(std::mt19937_64& rng, int n, std::vector<IdPair> edges) {
  std::vector<NodeSnapshot> nodes;
  for (int i = 1; i <= n; ++i) nodes.push_back(sgf::testing::random_node(rng, i, 8, Vec3(0.7 * i, 0.1 * i, 0), 0.6));
  return build_graph_input(nodes, edges, 3);
}

}  // namespace

TEST_CASE("loss examples") {
  Mat onehot = Mat::Zero(3, 4);
  const std::vector<int> labels{0, 2, 3};
  for (int i = 0; i < 3; ++i) onehot(i, labels[static_cast<std::size_t>(i)]) = 1000.0;
  CHECK(loss(onehot, Mat(0, 4), labels, {}).total == 0.0);

  const Mat uniform = Mat::Zero(5, 20);
  const std::vector<int> any{0, 19, 4, 4, 7};
  const auto u = loss(uniform, Mat(0, 4), any, {});
  CHECK(u.object == doctest::Approx(std::log(20.0)));
  CHECK(u.object == doctest::Approx(2.9957).epsilon(1e-4));
  CHECK(u.predicate == 0.0);
  CHECK(u.total == u.object);

  const Mat edges = Mat::Zero(2, 4);
  const std::vector<int> elabels{1, -1};
  const auto w = loss(uniform, edges, any, elabels);
  CHECK(w.predicate == doctest::Approx(std::log(4.0)));
  CHECK(w.total == doctest::Approx(std::log(20.0) + 0.1 * std::log(4.0)));

  const std::vector<int> bad{0, 20, 1, 1, 1};
  CHECK_THROWS_AS(loss(uniform, Mat(0, 4), bad, {}), DataError);
}

TEST_CASE("tape ops match finite differences") {
  std::mt19937_64 rng(1);
  const Mat x0 = random_mat(rng, 4, 3), w0 = random_mat(rng, 3, 5), b0 = random_mat(rng, 1, 5);
  const std::vector<int> labels{0, 4, -1, 2};
  const std::vector<int> group{0, 1, 0, 1};
  auto graph = [&](ad::Var x, ad::Var w, ad::Var b) {
    ad::Var pre = ad::linear(x, w, b);
    ad::Var h = ad::relu(pre);
    ad::Var m = ad::mul(ad::softmax_rows(ad::scale(h, 0.7)), pre);
    ad::Var c = ad::concat_cols(std::vector<ad::Var>{m, ad::slice_cols(h, 1, 2)});
    const std::vector<int> idx{0, 1, 2, 1};
    ad::Var r = ad::gather_rows(ad::segment_max(c, group, 3), idx);
    return ad::cross_entropy(ad::add(ad::slice_cols(r, 0, 5), ad::matmul(x, w)), labels);
  };
  auto f = [&](const Mat& x, const Mat& w, const Mat& b) {
    ad::Tape t;
    return graph(t.constant(x), t.constant(w), t.constant(b)).value()(0, 0);
  };
  ad::Tape tape;
  ad::Var x = tape.parameter(x0), w = tape.parameter(w0), b = tape.parameter(b0);
  ad::Var l = graph(x, w, b);
  tape.backward(l);
  CHECK(rel_err(*tape.grad(x.id), numeric_grad([&](const Mat& v) { return f(v, w0, b0); }, x0)) < 1e-6);
  CHECK(rel_err(*tape.grad(w.id), numeric_grad([&](const Mat& v) { return f(x0, v, b0); }, w0)) < 1e-6);
  CHECK(rel_err(*tape.grad(b.id), numeric_grad([&](const Mat& v) { return f(x0, w0, v); }, b0)) < 1e-6);
}

TEST_CASE("segment max routes ties to the lowest row") {
  ad::Tape tape;
  Mat x0(3, 1);
  x0 << 2, 2, 1;
  ad::Var x = tape.parameter(x0);
  const std::vector<int> group{0, 0, 0};
  ad::Var m = ad::segment_max(x, group, 2);
  CHECK(m.value()(0, 0) == 2);
  CHECK(m.value()(1, 0) == 0);
  ad::Var logits = ad::concat_cols(std::vector<ad::Var>{m, tape.constant(Mat::Zero(2, 1))});
  tape.backward(ad::cross_entropy(logits, std::vector<int>{0, 1}));
  const Mat& g = *tape.grad(x.id);
  CHECK(g(0, 0) != 0.0);
  CHECK(g(1, 0) == 0.0);
  CHECK(g(2, 0) == 0.0);
}

TEST_CASE("network gradients match finite differences on a 4-node graph") {
  std::mt19937_64 rng(2);
  auto params = SpnParameters::initialize(tiny_config(), 2);
  const auto input = small_input(rng, 4, {{1, 2}, {2, 1}, {2, 3}, {3, 2}, {3, 4}, {4, 3}, {1, 3}, {3, 1}});
  const std::vector<int> nl{0, 1, 2, 1}, el{1, 0, 2, 3, 0, 0, 1, 2};
  const auto result = compute_gradients(input, nl, el, params);
  const auto grads = result.gradients.tensors();
  auto tensors = params.tensors();
  const double h = 1e-5;
  std::uniform_int_distribution<int> pick(0, 1 << 30);
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    Mat& w = *tensors[t].second;
    for (int k = 0; k < 3; ++k) {
      const Eigen::Index i = pick(rng) % w.size();
      const double v = w.data()[i];
      w.data()[i] = v + h;
      const auto up = forward(input, params);
      w.data()[i] = v - h;
      const auto down = forward(input, params);
      w.data()[i] = v;
      const double numeric =
          (loss(up.node_logits, up.edge_logits, nl, el).total - loss(down.node_logits, down.edge_logits, nl, el).total) /
          (2 * h);
      const double analytic = grads[t].second->data()[i];
      const double err = std::abs(analytic - numeric) / std::max(1e-6, std::abs(analytic) + std::abs(numeric));
      INFO(tensors[t].first << "[" << i << "] analytic " << analytic << " numeric " << numeric);
      CHECK(err < 1e-4);
    }
  }
}

TEST_CASE("unreachable parameters get zero gradient") {
  std::mt19937_64 rng(3);
  const auto params = SpnParameters::initialize(tiny_config(), 3);
  const auto input = small_input(rng, 2, {});
  const std::vector<int> nl{0, 2};
  const auto r = compute_gradients(input, nl, {}, params);
  for (const auto& [name, g] : r.gradients.tensors())
    if (name.rfind("predicate_classifier", 0) == 0 || name.rfind("edge_encoder", 0) == 0) CHECK(g->isZero());
}

TEST_CASE("a duplicated edge doubles its predicate-head gradient") {
  const auto params = SpnParameters::initialize(tiny_config(), 4);
  std::mt19937_64 r1(9), r2(9);
  const auto once = small_input(r1, 2, {{1, 2}});
  const auto twice = small_input(r2, 2, {{1, 2}, {1, 2}});
  const std::vector<int> nl{0, 1};
  const std::vector<int> el1{2}, el2{2, 2};
  const auto a = compute_gradients(once, nl, el1, params, 1.0, ad::Reduction::Sum);
  const auto b = compute_gradients(twice, nl, el2, params, 1.0, ad::Reduction::Sum);
  const auto ga = a.gradients.tensors(), gb = b.gradients.tensors();
  int checked = 0;
  for (std::size_t i = 0; i < ga.size(); ++i) {
    if (ga[i].first.rfind("predicate_classifier", 0) != 0 && ga[i].first.rfind("gnn.1.edge_update", 0) != 0) continue;
    CHECK(((*gb[i].second) - 2.0 * (*ga[i].second)).cwiseAbs().maxCoeff() < 1e-10);
    ++checked;
  }
  CHECK(checked > 0);
}

TEST_CASE("learning rate rule") {
  CHECK(edge_scaled_learning_rate(1e-3, 0) == doctest::Approx(1e-3));
  CHECK(edge_scaled_learning_rate(1e-3, 2) == doctest::Approx(1e-3));
  CHECK(edge_scaled_learning_rate(1e-3, 1000) == doctest::Approx(1e-3 / std::log(1000.0)));
  // n = e^2 through the continuous rule
  CHECK(1e-3 / std::log(std::exp(2.0)) == doctest::Approx(5e-4));
}

TEST_CASE("optimizer step matches a scalar reference") {
  const ModelConfig c = tiny_config();
  auto params = SpnParameters::initialize(c, 5);
  auto grads = SpnParameters::zeros(c);
  std::mt19937_64 rng(5);
  auto state = OptimizerState::zeros(c);
  OptimizerConfig oc;
  double m = 0, v = 0, vmax = 0, w = params.tensors()[0].second->data()[0];
  for (int step = 1; step <= 5; ++step) {
    for (auto& [_, g] : grads.tensors()) *g = random_mat(rng, g->rows(), g->cols());
    const double g0 = grads.tensors()[0].second->data()[0];
    optimizer_step(params, grads, state, oc, 50);
    const double lr = 1e-3 / std::log(50.0);
    w *= 1 - lr * 0.01;
    m = 0.9 * m + 0.1 * g0;
    v = 0.999 * v + 0.001 * g0 * g0;
    vmax = std::max(vmax, v);
    w -= lr * (m / (1 - std::pow(0.9, step))) / (std::sqrt(vmax / (1 - std::pow(0.999, step))) + 1e-8);
    CHECK(params.tensors()[0].second->data()[0] == doctest::Approx(w).epsilon(1e-12));
    CHECK(state.step == step);
  }
  // max second moment never decreases
  auto prev = state.max_second_moment;
  for (auto& [_, g] : grads.tensors()) g->setZero();
  optimizer_step(params, grads, state, oc, 50);
  const auto a = prev.tensors();
  const auto b = state.max_second_moment.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK((b[i].second->array() >= a[i].second->array()).all());
}

TEST_CASE("zero gradient and zero decay leave parameters unchanged") {
  const ModelConfig c = tiny_config();
  auto params = SpnParameters::initialize(c, 6);
  const auto before = params;
  auto state = OptimizerState::zeros(c);
  OptimizerConfig oc;
  oc.weight_decay = 0.0;
  optimizer_step(params, SpnParameters::zeros(c), state, oc, 10);
  const auto a = before.tensors();
  const auto b = params.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
}

TEST_CASE("optimizer state round trip") {
  const auto dir = std::filesystem::temp_directory_path() / "sgf_test_opt";
  std::filesystem::create_directories(dir);
  const ModelConfig c = tiny_config();
  auto params = SpnParameters::initialize(c, 7);
  auto state = OptimizerState::zeros(c);
  std::mt19937_64 rng(7);
  auto grads = SpnParameters::zeros(c);
  for (auto& [_, g] : grads.tensors()) *g = random_mat(rng, g->rows(), g->cols());
  optimizer_step(params, grads, state, {}, 10);
  save_optimizer_state((dir / "opt").string(), state);
  const auto loaded = load_optimizer_state((dir / "opt").string(), c);
  CHECK(loaded.step == state.step);
  const auto a = state.max_second_moment.tensors();
  const auto b = loaded.max_second_moment.tensors();
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(*a[i].second == *b[i].second);
  std::filesystem::remove_all(dir);
}

TEST_CASE("training subgraph sampling") {
  std::mt19937_64 rng(8);
  SUBCASE("two nodes give the whole scene") {
    const auto scene = chain_scene(rng, 2);
    SamplerConfig sc;
    sc.edge_dropout = 0.0;
    const auto batch = sample_training_subgraph(scene, rng, sc);
    CHECK(batch.node_ids.size() == 2);
    CHECK(batch.edges.size() == 2);
  }
  SUBCASE("four hops along a chain") {
    const auto scene = chain_scene(rng, 10);
    const std::vector<SegmentId> seeds{1, 1};
    CHECK(select_training_nodes(scene, seeds, 4) == std::set<SegmentId>{1, 2, 3, 4, 5});
  }
  SUBCASE("half of the edges survive") {
    const auto scene = chain_scene(rng, 6);
    SamplerConfig sc;
    sc.hops = 10;
    sc.points_per_segment = 4;
    std::size_t kept = 0, total = 0;
    for (int i = 0; i < 1000; ++i) {
      const auto b = sample_training_subgraph(scene, rng, sc);
      kept += b.edges.size() / 2;
      total += scene.edges.size();
      CHECK(b.node_ids.size() == 6);
      CHECK(b.edges.size() % 2 == 0);
    }
    CHECK(std::abs(static_cast<double>(kept) / total - 0.5) < 0.05);
  }
  SUBCASE("labels follow the kept edges") {
    const auto scene = chain_scene(rng, 5);
    SamplerConfig sc;
    sc.hops = 10;
    sc.edge_dropout = 0.0;
    const auto b = sample_training_subgraph(scene, rng, sc);
    for (std::size_t i = 0; i < b.edges.size(); ++i) CHECK(b.edge_labels[i] == scene.edge_labels.at(b.edges[i]));
    for (std::size_t i = 0; i < b.node_ids.size(); ++i) CHECK(b.node_labels[i] == b.node_ids[i] % 3);
  }
}

TEST_CASE("training reduces the loss on a fixed batch") {
  std::mt19937_64 rng(9);
  const auto scene = chain_scene(rng, 5);
  SamplerConfig sc;
  sc.points_per_segment = 16;
  const auto batch = full_scene_batch(scene, sc, 1);
  auto params = SpnParameters::initialize(ModelConfig::desk(), 9);
  auto state = OptimizerState::zeros(ModelConfig::desk());
  const double start = compute_gradients(batch.input, batch.node_labels, batch.edge_labels, params).loss.total;
  double last = start;
  for (int i = 0; i < 200; ++i) {
    const auto r = compute_gradients(batch.input, batch.node_labels, batch.edge_labels, params);
    last = r.loss.total;
    optimizer_step(params, r.gradients, state, {}, batch.edges.size());
  }
  MESSAGE("loss " << start << " -> " << last);
  CHECK(last <= 0.5 * start);
}

TEST_CASE("training is deterministic") {
  std::mt19937_64 rng(10);
  const std::vector<TrainingScene> scenes{chain_scene(rng, 4), chain_scene(rng, 6)};
  TrainConfig tc;
  tc.model = tiny_config();
  tc.epochs = 3;
  tc.sampler.points_per_segment = 16;
  Trainer a(tc), b(tc);
  const auto ca = a.fit(scenes), cb = b.fit(scenes);
  REQUIRE(ca.size() == 3);
  for (std::size_t i = 0; i < ca.size(); ++i) CHECK(ca[i].loss == cb[i].loss);
  const auto pa = a.parameters().tensors(), pb = b.parameters().tensors();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i].second == *pb[i].second);
}

TEST_CASE("loss curve csv") {
  const auto path = std::filesystem::temp_directory_path() / "sgf_curve.csv";
  const std::vector<EpochRecord> recs{{1, 2.0, 1.5, 5.0}, {2, 1.0, 0.5, 5.0}};
  write_loss_curve_csv(path.string(), recs);
  std::ifstream in(path);
  std::string header;
  std::getline(in, header);
  CHECK(header == "epoch,loss,object_loss,predicate_loss");
  std::filesystem::remove(path);
}
