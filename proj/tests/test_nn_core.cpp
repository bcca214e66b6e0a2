#include <catch2/catch_amalgamated.hpp>
#include <cmath>
#include <vector>

#include "fedmobile/gradcheck.hpp"
#include "fedmobile/graph.hpp"
#include "fedmobile/model.hpp"

using namespace fedmobile;

namespace {

ArchitectureSpec small_mlp_spec(std::size_t input_dim = 4,
                                std::vector<std::size_t> hidden = {5, 3},
                                Activation act = Activation::Tanh) {
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::MLP;
  spec.input_dim = input_dim;
  spec.hidden_dims = std::move(hidden);
  spec.num_classes = 2;
  spec.activation = act;
  return spec;
}

DenseMatrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng) {
  DenseMatrix m(rows, cols);
  for (double& v : m.values) v = rng.uniform(-1.0, 1.0);
  return m;
}

// Straight-line re-implementation of the MLP forward pass, no shared code
// with forward_mlp beyond the parameter layout.
std::vector<double> naive_mlp_logits(const ModelParams& p, const std::vector<double>& x) {
  std::vector<double> h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& w = p.layers[l].weight;
    std::vector<double> z(w.cols, 0.0);
    for (std::size_t c = 0; c < w.cols; ++c) {
      z[c] = p.layers[l].bias[c];
      for (std::size_t r = 0; r < w.rows; ++r) z[c] += h[r] * w.at(r, c);
    }
    if (l + 1 < p.layers.size())
      for (double& v : z) v = p.spec.activation == Activation::ReLU ? std::max(v, 0.0)
                                                                    : std::tanh(v);
    h = z;
  }
  return h;
}

}  // namespace

TEST_CASE("xavier init is deterministic with zero biases") {
  auto spec = small_mlp_spec(128, {128});
  ModelParams a = xavier_init(spec, 42);
  ModelParams b = xavier_init(spec, 42);
  REQUIRE(a == b);
  ModelParams c = xavier_init(spec, 43);
  REQUIRE_FALSE(a == c);
  for (const auto& layer : a.layers)
    for (double bias : layer.bias) REQUIRE(bias == 0.0);
}

TEST_CASE("xavier init matches the stated uniform law") {
  // 128x128 layer: 16384 draws, variance must be near 2 / (128 + 128).
  auto spec = small_mlp_spec(128, {128});
  ModelParams p = xavier_init(spec, 7);
  const auto& w = p.layers[0].weight;
  REQUIRE(w.rows == 128);
  REQUIRE(w.cols == 128);
  double mean = 0.0;
  for (double v : w.values) mean += v;
  mean /= static_cast<double>(w.values.size());
  double var = 0.0;
  for (double v : w.values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(w.values.size());
  const double expected = 2.0 / (128.0 + 128.0);
  REQUIRE(var > 0.9 * expected);
  REQUIRE(var < 1.1 * expected);
  const double bound = std::sqrt(6.0 / 256.0);
  for (double v : w.values) REQUIRE(std::abs(v) <= bound);
}

TEST_CASE("xavier init rejects invalid specs") {
  ArchitectureSpec bad = small_mlp_spec();
  bad.input_dim = 0;
  REQUIRE_THROWS_AS(xavier_init(bad, 1), DimensionError);
  bad = small_mlp_spec();
  bad.num_classes = 1;
  REQUIRE_THROWS_AS(xavier_init(bad, 1), DimensionError);
}

TEST_CASE("forward_mlp zero weights give zero logits") {
  auto spec = small_mlp_spec();
  ModelParams p = xavier_init(spec, 1);
  for (auto& layer : p.layers)
    for (double& v : layer.weight.values) v = 0.0;
  Rng rng(3);
  DenseMatrix x = random_matrix(6, 4, rng);
  ForwardTrace t = forward_mlp(p, x);
  for (double v : t.logits.values) REQUIRE(v == 0.0);
}

TEST_CASE("forward_mlp single linear identity layer passes features through") {
  ArchitectureSpec spec;
  spec.input_dim = 3;
  spec.hidden_dims = {};
  spec.num_classes = 3;
  ModelParams p = xavier_init(spec, 1);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 3; ++c) p.layers[0].weight.at(r, c) = r == c ? 1.0 : 0.0;
  Rng rng(4);
  DenseMatrix x = random_matrix(5, 3, rng);
  ForwardTrace t = forward_mlp(p, x);
  REQUIRE(t.logits == x);
}

TEST_CASE("forward_mlp agrees with a straight-line re-implementation") {
  auto spec = small_mlp_spec(4, {5, 3}, Activation::ReLU);
  ModelParams p = xavier_init(spec, 11);
  Rng rng(5);
  DenseMatrix x = random_matrix(8, 4, rng);
  ForwardTrace t = forward_mlp(p, x);
  for (std::size_t r = 0; r < x.rows; ++r) {
    std::vector<double> row(x.cols);
    for (std::size_t c = 0; c < x.cols; ++c) row[c] = x.at(r, c);
    std::vector<double> expect = naive_mlp_logits(p, row);
    for (std::size_t c = 0; c < t.logits.cols; ++c)
      REQUIRE(t.logits.at(r, c) == Catch::Approx(expect[c]).margin(1e-10));
  }
}

TEST_CASE("forward_mlp rejects shape mismatches") {
  ModelParams p = xavier_init(small_mlp_spec(), 1);
  REQUIRE_THROWS_AS(forward_mlp(p, DenseMatrix(3, 7)), DimensionError);
}

TEST_CASE("forward determinism: identical inputs give identical traces") {
  auto spec = small_mlp_spec();
  ModelParams p = xavier_init(spec, 9);
  Rng rng(6);
  DenseMatrix x = random_matrix(4, 4, rng);
  ForwardTrace a = forward_mlp(p, x);
  ForwardTrace b = forward_mlp(p, x);
  REQUIRE(a.logits == b.logits);
  REQUIRE(a.pre_activations.size() == b.pre_activations.size());
  for (std::size_t l = 0; l < a.pre_activations.size(); ++l)
    REQUIRE(a.pre_activations[l] == b.pre_activations[l]);
}

TEST_CASE("forward_gcn zero-edge graph equals hand-computed per-node pipeline") {
  // Two isolated nodes: A_hat = I, so each node passes through the dense
  // hidden layer alone and the logits come from the pooled mean.
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::GCN;
  spec.input_dim = 2;
  spec.hidden_dims = {2};
  spec.num_classes = 2;
  spec.activation = Activation::ReLU;
  ModelParams p = xavier_init(spec, 1);
  p.layers[0].weight.values = {1.0, -1.0, 0.5, 2.0};  // 2x2
  p.layers[0].bias = {0.1, -0.2};
  p.layers[1].weight.values = {1.0, 0.0, -1.0, 1.0};  // 2x2
  p.layers[1].bias = {0.0, 0.3};

  TrajectoryGraph g;
  g.node_ids = {0, 1};
  g.node_features = DenseMatrix(2, 2);
  g.node_features.values = {1.0, 2.0, -1.0, 0.5};

  // Node 0: z = (1*1 + 2*0.5 + 0.1, 1*-1 + 2*2 - 0.2) = (2.1, 2.8), relu same.
  // Node 1: z = (-1 + 0.25 + 0.1, 1 + 1 - 0.2) = (-0.65, 1.8) -> relu (0, 1.8).
  // Pool: (1.05, 2.3). Logits: (1.05*1 + 2.3*-1, 1.05*0 + 2.3*1 + 0.3).
  ForwardTrace t = forward_gcn(p, g);
  REQUIRE(t.logits.rows == 1);
  REQUIRE(t.logits.at(0, 0) == Catch::Approx(1.05 - 2.3).margin(1e-12));
  REQUIRE(t.logits.at(0, 1) == Catch::Approx(2.3 + 0.3).margin(1e-12));
}

TEST_CASE("forward_gcn zero weights give zero logits") {
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::GCN;
  spec.input_dim = 4;
  spec.hidden_dims = {3};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 2);
  for (auto& layer : p.layers)
    for (double& v : layer.weight.values) v = 0.0;
  TrajectoryGraph g = build_mobility_graph({0, 1, 2, 1}, 3);
  REQUIRE(g.node_features.cols == 4);
  ForwardTrace t = forward_gcn(p, g);
  for (double v : t.logits.values) REQUIRE(v == 0.0);
}

TEST_CASE("forward_gcn is invariant under node relabeling") {
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::GCN;
  spec.input_dim = 5;
  spec.hidden_dims = {6, 4};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 3);

  TrajectoryGraph g;
  g.node_ids = {0, 1, 2, 3};
  g.edges = {{0, 1}, {1, 2}, {0, 3}};
  Rng rng(8);
  g.node_features = random_matrix(4, 5, rng);

  // Permute node order (reverse) and remap edges and features consistently.
  std::vector<int> perm = {3, 2, 1, 0};
  TrajectoryGraph h;
  h.node_ids = {0, 1, 2, 3};
  h.node_features = DenseMatrix(4, 5);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t c = 0; c < 5; ++c)
      h.node_features.at(static_cast<std::size_t>(perm[i]), c) = g.node_features.at(i, c);
  for (auto [u, v] : g.edges) {
    int a = perm[static_cast<std::size_t>(u)];
    int b = perm[static_cast<std::size_t>(v)];
    h.edges.push_back({std::min(a, b), std::max(a, b)});
  }

  ForwardTrace ta = forward_gcn(p, g);
  ForwardTrace tb = forward_gcn(p, h);
  for (std::size_t c = 0; c < ta.logits.cols; ++c)
    REQUIRE(ta.logits.at(0, c) == Catch::Approx(tb.logits.at(0, c)).margin(1e-10));
}

TEST_CASE("forward_gcn rejects empty graphs") {
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::GCN;
  spec.input_dim = 3;
  spec.hidden_dims = {2};
  ModelParams p = xavier_init(spec, 1);
  TrajectoryGraph g;
  REQUIRE_THROWS_AS(forward_gcn(p, g), InputError);
}

TEST_CASE("backward zero logit gradient gives zero parameter gradients") {
  ModelParams p = xavier_init(small_mlp_spec(), 5);
  Rng rng(9);
  DenseMatrix x = random_matrix(3, 4, rng);
  ForwardTrace t = forward_mlp(p, x);
  ModelParams g = backward(p, t, DenseMatrix(3, 2));
  for (const auto& layer : g.layers) {
    for (double v : layer.weight.values) REQUIRE(v == 0.0);
    for (double v : layer.bias) REQUIRE(v == 0.0);
  }
}

TEST_CASE("backward matches central finite differences on an MLP") {
  // Surrogate loss sum(G . logits) with a fixed random G exposes the raw
  // logit-to-parameter jacobian.
  auto spec = small_mlp_spec(4, {5, 3}, Activation::Tanh);
  ModelParams p = xavier_init(spec, 21);
  Rng rng(10);
  DenseMatrix x = random_matrix(6, 4, rng);
  DenseMatrix g = random_matrix(6, 2, rng);

  auto loss = [&](const ModelParams& q) {
    ForwardTrace t = forward_mlp(q, x);
    double total = 0.0;
    for (std::size_t i = 0; i < t.logits.values.size(); ++i)
      total += g.values[i] * t.logits.values[i];
    return total;
  };
  auto grad = [&](const ModelParams& q) { return backward(q, forward_mlp(q, x), g); };

  GradCheckReport report = finite_diff_check(p, loss, grad);
  INFO("max rel error " << report.max_rel_error);
  REQUIRE(report.passed(1e-4));
}

TEST_CASE("backward matches central finite differences on a GCN") {
  ArchitectureSpec spec;
  spec.model_kind = ModelKind::GCN;
  spec.input_dim = 4;
  spec.hidden_dims = {4, 3};
  spec.num_classes = 2;
  spec.activation = Activation::Tanh;
  ModelParams p = xavier_init(spec, 31);

  TrajectoryGraph graph = build_mobility_graph({0, 1, 0, 2}, 3);
  REQUIRE(graph.node_features.cols == 4);
  Rng rng(11);
  DenseMatrix g = random_matrix(1, 2, rng);

  auto loss = [&](const ModelParams& q) {
    ForwardTrace t = forward_gcn(q, graph);
    double total = 0.0;
    for (std::size_t i = 0; i < t.logits.values.size(); ++i)
      total += g.values[i] * t.logits.values[i];
    return total;
  };
  auto grad = [&](const ModelParams& q) { return backward(q, forward_gcn(q, graph), g); };

  GradCheckReport report = finite_diff_check(p, loss, grad);
  INFO("max rel error " << report.max_rel_error);
  REQUIRE(report.passed(1e-4));
}

TEST_CASE("backward linear squared-error surrogate matches the closed form") {
  ArchitectureSpec spec;
  spec.input_dim = 2;
  spec.hidden_dims = {};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 2);
  p.layers[0].weight.values = {0.5, -1.0, 2.0, 0.25};
  p.layers[0].bias = {0.1, -0.3};

  DenseMatrix x(2, 2);
  x.values = {1.0, 2.0, -1.0, 0.5};
  DenseMatrix y(2, 2);
  y.values = {0.0, 1.0, 1.0, 0.0};

  ForwardTrace t = forward_mlp(p, x);
  DenseMatrix residual = t.logits;
  axpy_inplace(residual, -1.0, y);
  ModelParams g = backward(p, t, residual);  // d/dW of 0.5 * ||XW + b - Y||^2

  // Closed form: grad W = X^T (XW + b - Y), grad b = column sums of residual.
  DenseMatrix expected_w = matmul_tn(x, residual);
  std::vector<double> expected_b = column_sums(residual);
  for (std::size_t i = 0; i < expected_w.values.size(); ++i)
    REQUIRE(g.layers[0].weight.values[i] == Catch::Approx(expected_w.values[i]).margin(1e-12));
  for (std::size_t i = 0; i < expected_b.size(); ++i)
    REQUIRE(g.layers[0].bias[i] == Catch::Approx(expected_b[i]).margin(1e-12));
}

TEST_CASE("backward rejects mismatched traces") {
  ModelParams p = xavier_init(small_mlp_spec(), 5);
  Rng rng(12);
  DenseMatrix x = random_matrix(3, 4, rng);
  ForwardTrace t = forward_mlp(p, x);
  REQUIRE_THROWS_AS(backward(p, t, DenseMatrix(3, 5)), DimensionError);
  ForwardTrace broken = t;
  broken.pre_activations.pop_back();
  REQUIRE_THROWS_AS(backward(p, broken, DenseMatrix(3, 2)), StateError);
}

TEST_CASE("apply_update with zero learning rate keeps parameters") {
  ModelParams p = xavier_init(small_mlp_spec(), 6);
  ModelParams g = zeros_like(p);
  for (auto& layer : g.layers)
    for (double& v : layer.weight.values) v = 1.0;
  OptimizerState opt;
  opt.learning_rate = 0.0;
  ModelParams before = p;
  apply_update(p, g, opt);
  REQUIRE(p == before);
  opt.kind = OptimizerKind::AdamW;
  apply_update(p, g, opt);
  REQUIRE(p == before);
}

TEST_CASE("sgd scalar step matches direct arithmetic") {
  ArchitectureSpec spec;
  spec.input_dim = 1;
  spec.hidden_dims = {};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 1);
  p.layers[0].weight.values = {1.0, 0.0};
  ModelParams g = zeros_like(p);
  g.layers[0].weight.values = {0.5, 0.0};
  OptimizerState opt;
  opt.kind = OptimizerKind::SGD;
  opt.learning_rate = 0.1;
  apply_update(p, g, opt);
  REQUIRE(p.layers[0].weight.values[0] == Catch::Approx(0.95).margin(1e-15));
  REQUIRE(opt.step_count == 1);
}

TEST_CASE("two sgd steps with a fixed gradient equal one doubled step") {
  ModelParams p1 = xavier_init(small_mlp_spec(), 8);
  ModelParams p2 = p1;
  ModelParams g = zeros_like(p1);
  Rng rng(13);
  for (auto& layer : g.layers)
    for (double& v : layer.weight.values) v = rng.uniform(-1.0, 1.0);

  OptimizerState o1;
  o1.learning_rate = 0.05;
  apply_update(p1, g, o1);
  apply_update(p1, g, o1);

  ModelParams g2 = zeros_like(p2);
  accumulate(g2, 2.0, g);
  OptimizerState o2;
  o2.learning_rate = 0.05;
  apply_update(p2, g2, o2);

  for (std::size_t l = 0; l < p1.layers.size(); ++l)
    for (std::size_t i = 0; i < p1.layers[l].weight.values.size(); ++i)
      REQUIRE(p1.layers[l].weight.values[i] ==
              Catch::Approx(p2.layers[l].weight.values[i]).margin(1e-12));
}

TEST_CASE("adamw first step moves weights toward the sign of the gradient") {
  ArchitectureSpec spec;
  spec.input_dim = 1;
  spec.hidden_dims = {};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 1);
  p.layers[0].weight.values = {1.0, -1.0};
  ModelParams g = zeros_like(p);
  g.layers[0].weight.values = {0.5, -0.25};
  OptimizerState opt;
  opt.kind = OptimizerKind::AdamW;
  opt.learning_rate = 0.001;
  apply_update(p, g, opt);
  // Bias-corrected first step: m_hat = g, v_hat = g^2, so the move is close
  // to -lr * sign(g).
  REQUIRE(p.layers[0].weight.values[0] == Catch::Approx(1.0 - 0.001).epsilon(1e-4));
  REQUIRE(p.layers[0].weight.values[1] == Catch::Approx(-1.0 + 0.001).epsilon(1e-4));
  REQUIRE(opt.first_moment.size() == p.layers.size());
  REQUIRE(opt.step_count == 1);
}

TEST_CASE("adamw decoupled weight decay shrinks weights independently") {
  ArchitectureSpec spec;
  spec.input_dim = 1;
  spec.hidden_dims = {};
  spec.num_classes = 2;
  ModelParams p = xavier_init(spec, 1);
  p.layers[0].weight.values = {2.0, 0.0};
  ModelParams g = zeros_like(p);  // zero gradient isolates the decay term
  OptimizerState opt;
  opt.kind = OptimizerKind::AdamW;
  opt.learning_rate = 0.1;
  opt.weight_decay = 0.5;
  apply_update(p, g, opt);
  REQUIRE(p.layers[0].weight.values[0] == Catch::Approx(2.0 - 0.1 * 0.5 * 2.0).margin(1e-12));
}

TEST_CASE("apply_update rejects nonfinite gradients") {
  ModelParams p = xavier_init(small_mlp_spec(), 6);
  ModelParams g = zeros_like(p);
  g.layers[0].weight.values[0] = std::numeric_limits<double>::quiet_NaN();
  OptimizerState opt;
  REQUIRE_THROWS_AS(apply_update(p, g, opt), NumericError);
}

TEST_CASE("finite_diff_check on a quadratic loss reports near-zero error") {
  ModelParams p = xavier_init(small_mlp_spec(), 14);
  auto loss = [](const ModelParams& q) {
    double total = 0.0;
    for (const auto& layer : q.layers) {
      for (double v : layer.weight.values) total += 0.5 * v * v;
      for (double v : layer.bias) total += 0.5 * v * v;
    }
    return total;
  };
  auto grad = [](const ModelParams& q) { return q; };
  GradCheckReport report = finite_diff_check(p, loss, grad);
  REQUIRE(report.coords_checked > 0);
  REQUIRE(report.max_rel_error < 1e-7);
}

TEST_CASE("finite_diff_check flags a deliberately corrupted gradient") {
  ModelParams p = xavier_init(small_mlp_spec(), 15);
  auto loss = [](const ModelParams& q) {
    double total = 0.0;
    for (const auto& layer : q.layers)
      for (double v : layer.weight.values) total += 0.5 * v * v;
    return total;
  };
  auto grad = [](const ModelParams& q) {
    ModelParams g = zeros_like(q);
    for (std::size_t l = 0; l < q.layers.size(); ++l)
      for (std::size_t i = 0; i < q.layers[l].weight.values.size(); ++i)
        g.layers[l].weight.values[i] = 1.1 * q.layers[l].weight.values[i];  // +10%
    return g;
  };
  GradCheckReport report = finite_diff_check(p, loss, grad);
  REQUIRE(report.max_rel_error > 1e-4);
}

TEST_CASE("finite_diff_check seeded subset checks at least the requested coords") {
  ModelParams p = xavier_init(small_mlp_spec(16, {16, 16}), 16);
  auto loss = [](const ModelParams& q) {
    double total = 0.0;
    for (const auto& layer : q.layers)
      for (double v : layer.weight.values) total += v * v;
    return total;
  };
  auto grad = [](const ModelParams& q) {
    ModelParams g = zeros_like(q);
    for (std::size_t l = 0; l < q.layers.size(); ++l)
      for (std::size_t i = 0; i < q.layers[l].weight.values.size(); ++i)
        g.layers[l].weight.values[i] = 2.0 * q.layers[l].weight.values[i];
    return g;
  };
  GradCheckOptions opts;
  opts.max_coords = 100;
  opts.seed = 3;
  GradCheckReport report = finite_diff_check(p, loss, grad, opts);
  REQUIRE(report.coords_checked == 100);
  REQUIRE(report.passed(1e-4));
}
