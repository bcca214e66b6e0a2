#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "fedmobile/error.hpp"
#include "fedmobile/graph.hpp"
#include "fedmobile/matrix.hpp"
#include "fedmobile/rng.hpp"

namespace fedmobile {

enum class ModelKind { MLP, GCN };
enum class Activation { ReLU, Tanh };

struct ArchitectureSpec {
  ModelKind model_kind = ModelKind::MLP;
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden_dims = {128, 128};
  std::size_t num_classes = 2;
  Activation activation = Activation::ReLU;

  void validate() const {
    if (input_dim == 0) throw DimensionError("spec: input_dim must be positive");
    if (num_classes < 2) throw DimensionError("spec: num_classes must be >= 2");
    for (std::size_t d : hidden_dims)
      if (d == 0) throw DimensionError("spec: hidden dim must be positive");
  }

  // Weight shapes chain input_dim -> hidden_dims... -> num_classes. The GCN
  // uses the same shapes: graph-convolution layers for the hidden dims, then
  // a dense output layer on the mean-pooled node embedding.
  std::vector<std::pair<std::size_t, std::size_t>> layer_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> shapes;
    std::size_t in = input_dim;
    for (std::size_t h : hidden_dims) {
      shapes.emplace_back(in, h);
      in = h;
    }
    shapes.emplace_back(in, num_classes);
    return shapes;
  }

  bool operator==(const ArchitectureSpec&) const = default;
};

struct LayerParams {
  DenseMatrix weight;         // fan_in x fan_out
  std::vector<double> bias;   // fan_out

  bool operator==(const LayerParams&) const = default;
};

struct ModelParams {
  ArchitectureSpec spec;
  std::vector<LayerParams> layers;

  void validate_shapes() const {
    spec.validate();
    auto shapes = spec.layer_shapes();
    if (layers.size() != shapes.size())
      throw StateError("params: layer count " + std::to_string(layers.size()) + " != " +
                       std::to_string(shapes.size()));
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (layers[l].weight.rows != shapes[l].first || layers[l].weight.cols != shapes[l].second)
        throw DimensionError("params: layer " + std::to_string(l) + " weight shape mismatch");
      if (layers[l].bias.size() != shapes[l].second)
        throw DimensionError("params: layer " + std::to_string(l) + " bias size mismatch");
    }
  }

  void validate() const {
    validate_shapes();
    for (std::size_t l = 0; l < layers.size(); ++l) {
      if (!layers[l].weight.all_finite())
        throw NumericError("params: nonfinite weight in layer " + std::to_string(l));
      for (double b : layers[l].bias)
        if (!std::isfinite(b)) throw NumericError("params: nonfinite bias");
    }
  }

  bool operator==(const ModelParams&) const = default;
};

inline ModelParams zeros_like(const ModelParams& p) {
  ModelParams z;
  z.spec = p.spec;
  z.layers.reserve(p.layers.size());
  for (const auto& l : p.layers)
    z.layers.push_back({DenseMatrix(l.weight.rows, l.weight.cols),
                        std::vector<double>(l.bias.size(), 0.0)});
  return z;
}

// grads of two models with identical shapes: a += s * b
inline void accumulate(ModelParams& a, double s, const ModelParams& b) {
  if (a.layers.size() != b.layers.size()) throw StateError("accumulate: layer count mismatch");
  for (std::size_t l = 0; l < a.layers.size(); ++l) {
    axpy_inplace(a.layers[l].weight, s, b.layers[l].weight);
    if (a.layers[l].bias.size() != b.layers[l].bias.size())
      throw DimensionError("accumulate: bias size mismatch");
    for (std::size_t i = 0; i < a.layers[l].bias.size(); ++i)
      a.layers[l].bias[i] += s * b.layers[l].bias[i];
  }
}

// Weights uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero. The draw
// order is fixed (layer by layer, row-major), so a given (spec, seed) always
// produces identical bytes.
inline ModelParams xavier_init(const ArchitectureSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p;
  p.spec = spec;
  Rng rng(derive_seed(seed, 0x1417));
  for (auto [fan_in, fan_out] : spec.layer_shapes()) {
    LayerParams layer;
    layer.weight = DenseMatrix(fan_in, fan_out);
    double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (double& v : layer.weight.values) v = rng.uniform(-bound, bound);
    layer.bias.assign(fan_out, 0.0);
    p.layers.push_back(std::move(layer));
  }
  return p;
}

// Everything backward() needs to replay the forward pass exactly.
struct ForwardTrace {
  DenseMatrix input;                        // batch x input_dim (node features for GCN)
  std::vector<DenseMatrix> pre_activations; // one per layer
  std::vector<DenseMatrix> activations;     // hidden layers only (act applied)
  DenseMatrix logits;                       // batch x num_classes (1 row for GCN)
  // GCN-only fields
  bool is_graph = false;
  DenseMatrix norm_adjacency;               // n x n
  std::vector<DenseMatrix> propagated;      // A_hat * H_{l-1}, per hidden layer
  DenseMatrix pooled;                       // 1 x last hidden dim
};

inline double apply_activation(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? z : 0.0;
    case Activation::Tanh: return std::tanh(z);
  }
  return z;
}

inline double activation_derivative(Activation a, double z) {
  switch (a) {
    case Activation::ReLU: return z > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: {
      double t = std::tanh(z);
      return 1.0 - t * t;
    }
  }
  return 1.0;
}

inline DenseMatrix activate(Activation a, const DenseMatrix& z) {
  DenseMatrix out = z;
  for (double& v : out.values) v = apply_activation(a, v);
  return out;
}

// Hidden layers use the configured activation, the output layer is identity.
inline ForwardTrace forward_mlp(const ModelParams& params, const DenseMatrix& features) {
  params.validate_shapes();
  if (features.cols != params.spec.input_dim)
    throw DimensionError("forward_mlp: feature dim " + std::to_string(features.cols) +
                         " != input_dim " + std::to_string(params.spec.input_dim));
  ForwardTrace trace;
  trace.input = features;
  const std::size_t num_layers = params.layers.size();
  const DenseMatrix* current = &trace.input;
  for (std::size_t l = 0; l < num_layers; ++l) {
    DenseMatrix z = matmul(*current, params.layers[l].weight);
    add_row_inplace(z, params.layers[l].bias);
    trace.pre_activations.push_back(std::move(z));
    if (l + 1 < num_layers) {
      trace.activations.push_back(activate(params.spec.activation, trace.pre_activations.back()));
      current = &trace.activations.back();
    }
  }
  trace.logits = trace.pre_activations.back();
  return trace;
}

// Graph convolution: H_l = act(A_hat * H_{l-1} * W_l + b_l) over the hidden
// layers, mean pooling over nodes, then a dense output layer.
inline ForwardTrace forward_gcn(const ModelParams& params, const TrajectoryGraph& graph) {
  params.validate_shapes();
  if (graph.num_nodes() == 0) throw InputError("forward_gcn: empty graph");
  if (graph.node_features.cols != params.spec.input_dim)
    throw DimensionError("forward_gcn: node feature dim " +
                         std::to_string(graph.node_features.cols) + " != input_dim " +
                         std::to_string(params.spec.input_dim));
  ForwardTrace trace;
  trace.is_graph = true;
  trace.input = graph.node_features;
  trace.norm_adjacency = normalized_adjacency(graph);

  const std::size_t num_hidden = params.layers.size() - 1;
  const DenseMatrix* current = &trace.input;
  for (std::size_t l = 0; l < num_hidden; ++l) {
    DenseMatrix prop = matmul(trace.norm_adjacency, *current);
    DenseMatrix z = matmul(prop, params.layers[l].weight);
    add_row_inplace(z, params.layers[l].bias);
    trace.propagated.push_back(std::move(prop));
    trace.pre_activations.push_back(std::move(z));
    trace.activations.push_back(activate(params.spec.activation, trace.pre_activations.back()));
    current = &trace.activations.back();
  }

  const std::size_t n = graph.num_nodes();
  trace.pooled = DenseMatrix(1, current->cols);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < current->cols; ++c)
      trace.pooled.at(0, c) += current->at(r, c) / static_cast<double>(n);

  DenseMatrix z = matmul(trace.pooled, params.layers.back().weight);
  add_row_inplace(z, params.layers.back().bias);
  trace.pre_activations.push_back(z);
  trace.logits = std::move(z);
  return trace;
}

namespace detail {

inline DenseMatrix activation_grad(Activation a, const DenseMatrix& upstream,
                                   const DenseMatrix& pre_activation) {
  DenseMatrix g = upstream;
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] *= activation_derivative(a, pre_activation.values[i]);
  return g;
}

inline ModelParams backward_mlp(const ModelParams& params, const ForwardTrace& trace,
                                const DenseMatrix& logit_grad) {
  ModelParams grads = zeros_like(params);
  const std::size_t num_layers = params.layers.size();
  DenseMatrix g = logit_grad;  // gradient w.r.t. pre-activation of layer l
  for (std::size_t l = num_layers; l-- > 0;) {
    const DenseMatrix& layer_input = (l == 0) ? trace.input : trace.activations[l - 1];
    grads.layers[l].weight = matmul_tn(layer_input, g);
    grads.layers[l].bias = column_sums(g);
    if (l > 0) {
      DenseMatrix upstream = matmul_nt(g, params.layers[l].weight);
      g = activation_grad(params.spec.activation, upstream, trace.pre_activations[l - 1]);
    }
  }
  return grads;
}

inline ModelParams backward_gcn(const ModelParams& params, const ForwardTrace& trace,
                                const DenseMatrix& logit_grad) {
  ModelParams grads = zeros_like(params);
  const std::size_t num_hidden = params.layers.size() - 1;
  const std::size_t n = trace.input.rows;

  // Output layer on the pooled embedding.
  grads.layers.back().weight = matmul_tn(trace.pooled, logit_grad);
  grads.layers.back().bias = column_sums(logit_grad);
  DenseMatrix pooled_grad = matmul_nt(logit_grad, params.layers.back().weight);  // 1 x d

  // Mean pooling spreads the gradient evenly over nodes.
  DenseMatrix h_grad(n, pooled_grad.cols);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < pooled_grad.cols; ++c)
      h_grad.at(r, c) = pooled_grad.at(0, c) / static_cast<double>(n);

  for (std::size_t l = num_hidden; l-- > 0;) {
    DenseMatrix g = activation_grad(params.spec.activation, h_grad, trace.pre_activations[l]);
    grads.layers[l].weight = matmul_tn(trace.propagated[l], g);
    grads.layers[l].bias = column_sums(g);
    if (l > 0) {
      DenseMatrix back = matmul_nt(g, params.layers[l].weight);
      // A_hat is symmetric, so propagating the gradient reuses it directly.
      h_grad = matmul(trace.norm_adjacency, back);
    }
  }
  return grads;
}

}  // namespace detail

// Exact reverse-mode gradients of every weight and bias given the gradient of
// the loss w.r.t. the logits. Returns a gradient-shaped ModelParams.
inline ModelParams backward(const ModelParams& params, const ForwardTrace& trace,
                            const DenseMatrix& logit_grad) {
  if (trace.pre_activations.size() != params.layers.size())
    throw StateError("backward: trace depth != layer count");
  if (!logit_grad.same_shape(trace.logits))
    throw DimensionError("backward: logit_grad shape mismatch");
  return trace.is_graph ? detail::backward_gcn(params, trace, logit_grad)
                        : detail::backward_mlp(params, trace, logit_grad);
}

enum class OptimizerKind { SGD, AdamW };

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::SGD;
  double learning_rate = 1e-3;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t step_count = 0;
  std::vector<LayerParams> first_moment;   // AdamW only
  std::vector<LayerParams> second_moment;  // AdamW only

  void validate() const {
    if (learning_rate < 0.0) throw ConfigError("optimizer: learning_rate must be >= 0");
    if (weight_decay < 0.0) throw ConfigError("optimizer: weight_decay must be >= 0");
  }
};

namespace detail {

inline void check_grads_finite(const ModelParams& grads) {
  for (const auto& l : grads.layers) {
    if (!l.weight.all_finite()) throw NumericError("apply_update: nonfinite weight gradient");
    for (double b : l.bias)
      if (!std::isfinite(b)) throw NumericError("apply_update: nonfinite bias gradient");
  }
}

inline void ensure_moments(OptimizerState& opt, const ModelParams& params) {
  if (!opt.first_moment.empty()) return;
  ModelParams z = zeros_like(params);
  opt.first_moment = z.layers;
  opt.second_moment = z.layers;
}

}  // namespace detail

// SGD: W -= eta * g (any L2 penalty arrives through the loss gradient).
// AdamW: decoupled weight decay, bias-corrected moments.
inline void apply_update(ModelParams& params, const ModelParams& grads, OptimizerState& opt) {
  if (params.layers.size() != grads.layers.size())
    throw StateError("apply_update: gradient layer count mismatch");
  for (std::size_t l = 0; l < params.layers.size(); ++l)
    if (!params.layers[l].weight.same_shape(grads.layers[l].weight) ||
        params.layers[l].bias.size() != grads.layers[l].bias.size())
      throw DimensionError("apply_update: gradient shape mismatch in layer " + std::to_string(l));
  detail::check_grads_finite(grads);

  opt.step_count += 1;
  if (opt.kind == OptimizerKind::SGD) {
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
      axpy_inplace(params.layers[l].weight, -opt.learning_rate, grads.layers[l].weight);
      for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i)
        params.layers[l].bias[i] -= opt.learning_rate * grads.layers[l].bias[i];
    }
    return;
  }

  detail::ensure_moments(opt, params);
  const double t = static_cast<double>(opt.step_count);
  const double bc1 = 1.0 - std::pow(opt.beta1, t);
  const double bc2 = 1.0 - std::pow(opt.beta2, t);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto update = [&](double& w, double g, double& m, double& v) {
      m = opt.beta1 * m + (1.0 - opt.beta1) * g;
      v = opt.beta2 * v + (1.0 - opt.beta2) * g * g;
      double m_hat = m / bc1;
      double v_hat = v / bc2;
      w -= opt.learning_rate * (m_hat / (std::sqrt(v_hat) + opt.epsilon) + opt.weight_decay * w);
    };
    auto& w = params.layers[l].weight.values;
    const auto& g = grads.layers[l].weight.values;
    auto& m = opt.first_moment[l].weight.values;
    auto& v = opt.second_moment[l].weight.values;
    for (std::size_t i = 0; i < w.size(); ++i) update(w[i], g[i], m[i], v[i]);
    for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i)
      update(params.layers[l].bias[i], grads.layers[l].bias[i], opt.first_moment[l].bias[i],
             opt.second_moment[l].bias[i]);
  }
}

}  // namespace fedmobile
