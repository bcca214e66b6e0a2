#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <thread>
#include <vector>

#include "fedmobile/data.hpp"
#include "fedmobile/error.hpp"
#include "fedmobile/losses.hpp"
#include "fedmobile/metrics.hpp"
#include "fedmobile/model.hpp"

namespace fedmobile {

struct FedMobileConfig {
  int num_clients = 10;          // K
  int expert_rounds = 40;        // communication rounds for expert training
  int incremental_rounds = 10;   // rounds per stream batch
  int stream_batches = 8;        // incremental updates over the stream
  int local_epochs = 1;          // E
  int batch_size = 256;          // B
  double unlabeled_ratio = 1.0;  // unlabeled-to-labeled batch size ratio
  LossConfig loss;
  OptimizerKind optimizer = OptimizerKind::AdamW;
  double learning_rate = 1e-3;
  double incremental_learning_rate = 0.0;  // 0 = use learning_rate
  double weight_decay = 0.0;
  double feature_noise_sd = 0.3;  // stochastic perturbation for feature inputs
  double edge_flip_prob = 0.05;   // stochastic perturbation for graph inputs
  bool warm_start_apprentice = false;  // start step 2 from the expert instead of fresh init
  double pseudo_label_threshold = 0.9;
  bool parallel_clients = false;
  int centralized_epochs = 0;  // 0 = expert_rounds

  void validate() const {
    if (num_clients < 1) throw ConfigError("fl: num_clients must be >= 1");
    if (expert_rounds < 0) throw ConfigError("fl: expert_rounds must be >= 0");
    if (incremental_rounds < 1) throw ConfigError("fl: incremental_rounds must be >= 1");
    if (stream_batches < 0) throw ConfigError("fl: stream_batches must be >= 0");
    if (local_epochs < 1) throw ConfigError("fl: local_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("fl: batch_size must be >= 1");
    if (unlabeled_ratio < 0.0) throw ConfigError("fl: unlabeled_ratio must be >= 0");
    if (learning_rate < 0.0) throw ConfigError("fl: learning_rate must be >= 0");
    if (incremental_learning_rate < 0.0)
      throw ConfigError("fl: incremental_learning_rate must be >= 0");
    if (feature_noise_sd < 0.0) throw ConfigError("fl: feature_noise_sd must be >= 0");
    if (edge_flip_prob < 0.0 || edge_flip_prob > 1.0)
      throw ConfigError("fl: edge_flip_prob must be in [0, 1]");
    if (pseudo_label_threshold <= 0.5 || pseudo_label_threshold > 1.0)
      throw ConfigError("fl: pseudo_label_threshold must be in (0.5, 1]");
    if (centralized_epochs < 0) throw ConfigError("fl: centralized_epochs must be >= 0");
    loss.validate();
  }
};

// The only data a local update may read: this client's own samples.
struct ClientView {
  int client_id = 0;
  std::vector<const Sample*> labeled;
  std::vector<const Sample*> unlabeled;
};

inline ClientView make_client_view(const StreamBatch& batch, int client_id) {
  ClientView view;
  view.client_id = client_id;
  const auto& data = batch.clients.at(static_cast<std::size_t>(client_id));
  for (const auto& s : data.labeled) view.labeled.push_back(&s);
  for (const auto& s : data.unlabeled) view.unlabeled.push_back(&s);
  return view;
}

struct LocalUpdateResult {
  bool skipped = false;
  ModelParams weights;
  LossBreakdown mean_loss;
  std::size_t labeled_count = 0;  // n_k used for aggregation
  std::size_t steps = 0;
};

enum class Phase { Expert, Incremental, FineTune, Centralized };

inline std::string phase_name(Phase p) {
  switch (p) {
    case Phase::Expert: return "expert";
    case Phase::Incremental: return "incremental";
    case Phase::FineTune: return "finetune";
    case Phase::Centralized: return "centralized";
  }
  return "?";
}

struct RoundLog {
  int round = 0;      // 1-based within the trainer that produced it
  Phase phase = Phase::Expert;
  int stream_t = -1;  // stream batch index for incremental/fine-tune rounds
  LossBreakdown mean_loss;
  int participating_clients = 0;
  std::size_t pseudo_labels = 0;
  MetricsReport train, validation, test;
};

struct EvalData {
  std::vector<const Sample*> train, validation, test;
};

// ----- batched forward/backward over samples ---------------------------------

namespace detail {

struct BatchForward {
  std::vector<ForwardTrace> traces;  // one for features, one per sample for graphs
  DenseMatrix logits;                // batch x num_classes
  bool is_graph = false;
};

inline DenseMatrix stack_features(const std::vector<const Sample*>& samples) {
  if (samples.empty()) return DenseMatrix(0, 0);
  DenseMatrix m(samples.size(), samples[0]->features().size());
  for (std::size_t r = 0; r < samples.size(); ++r) {
    const auto& x = samples[r]->features();
    if (x.size() != m.cols) throw DimensionError("batch: inconsistent feature dims");
    for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = x[c];
  }
  return m;
}

inline BatchForward forward_batch(const ModelParams& params,
                                  const std::vector<const Sample*>& samples) {
  BatchForward fwd;
  if (samples.empty()) {
    fwd.logits = DenseMatrix(0, params.spec.num_classes);
    return fwd;
  }
  fwd.is_graph = samples[0]->is_graph();
  if (!fwd.is_graph) {
    fwd.traces.push_back(forward_mlp(params, stack_features(samples)));
    fwd.logits = fwd.traces[0].logits;
  } else {
    fwd.logits = DenseMatrix(samples.size(), params.spec.num_classes);
    fwd.traces.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
      fwd.traces.push_back(forward_gcn(params, samples[i]->graph()));
      for (std::size_t c = 0; c < fwd.logits.cols; ++c)
        fwd.logits.at(i, c) = fwd.traces.back().logits.at(0, c);
    }
  }
  return fwd;
}

// Forward over stochastically perturbed copies of the samples. The perturbed
// inputs are materialized first so the loss stays deterministic afterwards.
inline BatchForward forward_batch_perturbed(const ModelParams& params,
                                            const std::vector<const Sample*>& samples,
                                            const FedMobileConfig& cfg, Rng& rng) {
  BatchForward fwd;
  if (samples.empty()) {
    fwd.logits = DenseMatrix(0, params.spec.num_classes);
    return fwd;
  }
  fwd.is_graph = samples[0]->is_graph();
  if (!fwd.is_graph) {
    DenseMatrix m(samples.size(), samples[0]->features().size());
    for (std::size_t r = 0; r < samples.size(); ++r) {
      auto x = perturb_features(samples[r]->features(), cfg.feature_noise_sd, rng);
      for (std::size_t c = 0; c < m.cols; ++c) m.at(r, c) = x[c];
    }
    fwd.traces.push_back(forward_mlp(params, m));
    fwd.logits = fwd.traces[0].logits;
  } else {
    fwd.logits = DenseMatrix(samples.size(), params.spec.num_classes);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      TrajectoryGraph g = perturb_graph(samples[i]->graph(), cfg.edge_flip_prob, rng);
      fwd.traces.push_back(forward_gcn(params, g));
      for (std::size_t c = 0; c < fwd.logits.cols; ++c)
        fwd.logits.at(i, c) = fwd.traces.back().logits.at(0, c);
    }
  }
  return fwd;
}

inline void backward_batch(const ModelParams& params, const BatchForward& fwd,
                           const DenseMatrix& logit_grad, ModelParams& grads) {
  if (logit_grad.rows == 0) return;
  if (!fwd.is_graph) {
    accumulate(grads, 1.0, backward(params, fwd.traces[0], logit_grad));
    return;
  }
  DenseMatrix row(1, logit_grad.cols);
  for (std::size_t i = 0; i < fwd.traces.size(); ++i) {
    for (std::size_t c = 0; c < logit_grad.cols; ++c) row.at(0, c) = logit_grad.at(i, c);
    accumulate(grads, 1.0, backward(params, fwd.traces[i], row));
  }
}

inline std::vector<int> labels_of(const std::vector<const Sample*>& samples) {
  std::vector<int> labels;
  labels.reserve(samples.size());
  for (const auto* s : samples) {
    if (!s->label) throw StateError("labels_of: unlabeled sample in labeled batch");
    labels.push_back(*s->label);
  }
  return labels;
}

// Cycling shuffled index stream over the unlabeled pool. The shuffle is lazy:
// constructing the cycler consumes no rng draws.
class UnlabeledCycler {
 public:
  UnlabeledCycler(std::size_t pool_size, Rng& rng)
      : pool_(pool_size), rng_(rng), cursor_(pool_size) {
    for (std::size_t i = 0; i < pool_size; ++i) pool_[i] = i;
  }

  std::vector<std::size_t> take(std::size_t count) {
    std::vector<std::size_t> out;
    if (pool_.empty()) return out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (cursor_ == pool_.size()) {
        rng_.shuffle(pool_);
        cursor_ = 0;
      }
      out.push_back(pool_[cursor_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  Rng& rng_;
  std::size_t cursor_ = 0;
};

struct StepContext {
  const ModelParams* expert = nullptr;   // frozen teacher for incremental steps
  OptimizerState* persistent_opt = nullptr;  // carried across calls when set
};

// One client-local training pass shared by the expert and incremental phases:
// for each epoch and labeled mini-batch, pair it with a cycled unlabeled batch,
// compute the composite loss gradients and take one optimizer step.
inline LocalUpdateResult run_local_update(const ClientView& view, const ModelParams& start,
                                          const FedMobileConfig& cfg, double learning_rate,
                                          std::uint64_t rng_seed, const StepContext& ctx) {
  LocalUpdateResult result;
  result.labeled_count = view.labeled.size();
  if (view.labeled.empty()) {
    result.skipped = true;
    return result;
  }

  ModelParams params = start;
  OptimizerState local_opt;
  local_opt.kind = cfg.optimizer;
  local_opt.learning_rate = learning_rate;
  local_opt.weight_decay = cfg.weight_decay;
  OptimizerState& opt = ctx.persistent_opt ? *ctx.persistent_opt : local_opt;

  Rng rng(rng_seed);
  UnlabeledCycler cycler(view.unlabeled.size(), rng);

  std::vector<std::size_t> labeled_order(view.labeled.size());
  for (std::size_t i = 0; i < labeled_order.size(); ++i) labeled_order[i] = i;

  LossBreakdown accum;
  for (int epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    rng.shuffle(labeled_order);
    for (std::size_t begin = 0; begin < labeled_order.size();
         begin += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end =
          std::min(begin + static_cast<std::size_t>(cfg.batch_size), labeled_order.size());
      std::vector<const Sample*> labeled_batch;
      labeled_batch.reserve(end - begin);
      for (std::size_t i = begin; i < end; ++i)
        labeled_batch.push_back(view.labeled[labeled_order[i]]);
      const std::vector<int> labels = labels_of(labeled_batch);

      // With lambda = 0 the CR term vanishes, so the unlabeled branch is
      // skipped entirely and consumes no rng draws.
      const bool use_cr = cfg.loss.lambda > 0.0 && !view.unlabeled.empty();
      std::vector<const Sample*> unlabeled_batch;
      if (use_cr) {
        const std::size_t unlabeled_want = static_cast<std::size_t>(
            std::ceil(cfg.unlabeled_ratio * static_cast<double>(labeled_batch.size())));
        for (std::size_t idx : cycler.take(unlabeled_want))
          unlabeled_batch.push_back(view.unlabeled[idx]);
      }

      BatchForward fwd_labeled = forward_batch(params, labeled_batch);
      BatchForward fwd_clean = forward_batch(params, unlabeled_batch);
      BatchForward fwd_pert = forward_batch_perturbed(params, unlabeled_batch, cfg, rng);

      const LossConfig& loss_cfg = cfg.loss;
      ModelParams grads = l2_reg_grad(params, loss_cfg.l2_coeff);
      LossBreakdown step_loss;
      if (ctx.expert == nullptr) {
        step_loss = expert_step_loss(fwd_labeled.logits, labels, fwd_clean.logits,
                                     fwd_pert.logits, params, loss_cfg);
        backward_batch(params, fwd_labeled, ce_logit_grad(fwd_labeled.logits, labels), grads);
      } else {
        BatchForward fwd_expert = forward_batch(*ctx.expert, labeled_batch);
        step_loss = incremental_step_loss(fwd_labeled.logits, labels, fwd_expert.logits,
                                          fwd_clean.logits, fwd_pert.logits, params, loss_cfg);
        DenseMatrix labeled_grad = ce_logit_grad(fwd_labeled.logits, labels);
        scale_inplace(labeled_grad, 1.0 - loss_cfg.alpha);
        DenseMatrix kd_grad = kd_logit_grad(fwd_labeled.logits, fwd_expert.logits,
                                            loss_cfg.kd_temperature, loss_cfg.kd_direction);
        axpy_inplace(labeled_grad, loss_cfg.alpha, kd_grad);
        backward_batch(params, fwd_labeled, labeled_grad, grads);
      }
      if (!unlabeled_batch.empty() && loss_cfg.lambda > 0.0) {
        CrLogitGrads cr = cr_logit_grads(fwd_clean.logits, fwd_pert.logits, loss_cfg.lambda,
                                         loss_cfg.cr_stop_gradient_clean);
        backward_batch(params, fwd_clean, cr.clean, grads);
        backward_batch(params, fwd_pert, cr.perturbed, grads);
      }
      apply_update(params, grads, opt);

      accum.ce += step_loss.ce;
      accum.cr += step_loss.cr;
      accum.kd += step_loss.kd;
      accum.reg += step_loss.reg;
      accum.total += step_loss.total;
      result.steps++;
    }
  }

  const double inv_steps = 1.0 / static_cast<double>(std::max<std::size_t>(result.steps, 1));
  result.mean_loss = {accum.ce * inv_steps, accum.cr * inv_steps, accum.kd * inv_steps,
                      accum.reg * inv_steps, accum.total * inv_steps};
  result.weights = std::move(params);
  return result;
}

}  // namespace detail

// Client-local training with consistency regularization (expert phase). The
// client starts from the current global weights; global state is untouched.
inline LocalUpdateResult local_update_cr(const ClientView& view, const ModelParams& global_weights,
                                         const FedMobileConfig& cfg, std::uint64_t rng_seed) {
  return detail::run_local_update(view, global_weights, cfg, cfg.learning_rate, rng_seed, {});
}

// Incremental client-local training: same loop, but the composite loss also
// distills from the frozen expert on each labeled batch.
inline LocalUpdateResult incremental_local_update_cr(const ClientView& view,
                                                     const ModelParams& apprentice_weights,
                                                     const ModelParams& expert_model,
                                                     const FedMobileConfig& cfg,
                                                     std::uint64_t rng_seed) {
  detail::StepContext ctx;
  ctx.expert = &expert_model;
  const double lr = cfg.incremental_learning_rate > 0.0 ? cfg.incremental_learning_rate
                                                        : cfg.learning_rate;
  return detail::run_local_update(view, apprentice_weights, cfg, lr, rng_seed, ctx);
}

// Sample-count-weighted coordinate mean, summed in the given (client id)
// order. Computed in delta form around the first model so that identical
// inputs aggregate to themselves exactly.
inline ModelParams fedavg_aggregate(const std::vector<ModelParams>& client_weights,
                                    const std::vector<std::size_t>& client_sizes) {
  if (client_weights.empty()) throw AggregationError("fedavg: no client weights");
  if (client_weights.size() != client_sizes.size())
    throw AggregationError("fedavg: weights/sizes length mismatch");
  std::size_t total = 0;
  for (std::size_t n : client_sizes) total += n;
  if (total == 0) throw AggregationError("fedavg: zero total sample count");
  for (const auto& w : client_weights)
    if (w.layers.size() != client_weights[0].layers.size())
      throw AggregationError("fedavg: layer count mismatch");

  ModelParams out = client_weights[0];
  for (std::size_t k = 1; k < client_weights.size(); ++k) {
    const double wk = static_cast<double>(client_sizes[k]) / static_cast<double>(total);
    for (std::size_t l = 0; l < out.layers.size(); ++l) {
      auto& acc_w = out.layers[l].weight;
      const auto& base_w = client_weights[0].layers[l].weight;
      const auto& cw = client_weights[k].layers[l].weight;
      if (!cw.same_shape(base_w)) throw AggregationError("fedavg: weight shape mismatch");
      for (std::size_t i = 0; i < acc_w.values.size(); ++i)
        acc_w.values[i] += wk * (cw.values[i] - base_w.values[i]);
      auto& acc_b = out.layers[l].bias;
      const auto& base_b = client_weights[0].layers[l].bias;
      const auto& cb = client_weights[k].layers[l].bias;
      if (cb.size() != base_b.size()) throw AggregationError("fedavg: bias shape mismatch");
      for (std::size_t i = 0; i < acc_b.size(); ++i) acc_b[i] += wk * (cb[i] - base_b[i]);
    }
  }
  return out;
}

// Scores labeled samples with the positive-class probability and computes the
// report. pr_auc falls back to 0 when the set has no positive labels.
inline MetricsReport evaluate(const ModelParams& params,
                              const std::vector<const Sample*>& samples) {
  std::vector<const Sample*> labeled;
  labeled.reserve(samples.size());
  for (const auto* s : samples)
    if (s->label) labeled.push_back(s);

  MetricsReport report;
  if (labeled.empty()) return report;

  detail::BatchForward fwd = detail::forward_batch(params, labeled);
  DenseMatrix probs = softmax_rows(fwd.logits);
  std::vector<double> scores(labeled.size());
  std::vector<int> preds(labeled.size());
  std::vector<int> truth(labeled.size());
  for (std::size_t i = 0; i < labeled.size(); ++i) {
    scores[i] = probs.at(i, 1);
    std::size_t best = 0;
    for (std::size_t c = 1; c < probs.cols; ++c)
      if (probs.at(i, c) > probs.at(i, best)) best = c;
    preds[i] = static_cast<int>(best);
    truth[i] = *labeled[i]->label;
  }
  report.counts = confusion(preds, truth);
  auto prf = precision_recall_f1(report.counts);
  report.precision = prf.precision;
  report.recall = prf.recall;
  report.f1 = prf.f1;
  if (std::count(truth.begin(), truth.end(), 1) > 0) report.pr_auc = pr_auc(scores, truth);
  return report;
}

namespace detail {

template <typename Fn>
void run_clients(std::size_t count, bool parallel, Fn&& fn) {
  if (!parallel || count < 2) {
    for (std::size_t k = 0; k < count; ++k) fn(k);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(count);
  for (std::size_t k = 0; k < count; ++k) workers.emplace_back([&fn, k] { fn(k); });
  for (auto& w : workers) w.join();
}

inline void fill_metrics(RoundLog& log, const ModelParams& params, const EvalData* eval) {
  if (eval == nullptr) return;
  log.train = evaluate(params, eval->train);
  log.validation = evaluate(params, eval->validation);
  log.test = evaluate(params, eval->test);
}

inline LossBreakdown mean_client_loss(const std::vector<LocalUpdateResult>& results) {
  LossBreakdown mean;
  int n = 0;
  for (const auto& r : results) {
    if (r.skipped) continue;
    mean.ce += r.mean_loss.ce;
    mean.cr += r.mean_loss.cr;
    mean.kd += r.mean_loss.kd;
    mean.reg += r.mean_loss.reg;
    mean.total += r.mean_loss.total;
    ++n;
  }
  if (n > 0) {
    mean.ce /= n;
    mean.cr /= n;
    mean.kd /= n;
    mean.reg /= n;
    mean.total /= n;
  }
  return mean;
}

// One communication round: parallel local updates, then FedAvg over the
// clients that participated. Skipped clients are excluded from n.
template <typename UpdateFn>
ModelParams communication_round(const std::vector<ClientView>& clients, bool parallel,
                                UpdateFn&& update, RoundLog& log) {
  std::vector<LocalUpdateResult> results(clients.size());
  run_clients(clients.size(), parallel,
              [&](std::size_t k) { results[k] = update(k); });

  std::vector<ModelParams> weights;
  std::vector<std::size_t> sizes;
  for (auto& r : results) {
    if (r.skipped) continue;
    weights.push_back(std::move(r.weights));
    sizes.push_back(r.labeled_count);
  }
  if (weights.empty())
    throw RoundError("round " + std::to_string(log.round) + ": all clients skipped");
  log.participating_clients = static_cast<int>(weights.size());
  log.mean_loss = mean_client_loss(results);
  return fedavg_aggregate(weights, sizes);
}

}  // namespace detail

struct TrainResult {
  ModelParams model;
  std::vector<RoundLog> logs;
};

// Expert training: Xavier init, then expert_rounds communication rounds of
// {parallel local updates with CR, FedAvg}.
inline TrainResult train_expert(const std::vector<ClientView>& clients,
                                const FedMobileConfig& cfg, const ArchitectureSpec& arch,
                                std::uint64_t seed, const EvalData* eval = nullptr) {
  cfg.validate();
  if (clients.empty()) throw ConfigError("train_expert: no clients");
  TrainResult result;
  result.model = xavier_init(arch, derive_seed(seed, 0xe277));
  for (int c = 1; c <= cfg.expert_rounds; ++c) {
    RoundLog log;
    log.round = c;
    log.phase = Phase::Expert;
    const ModelParams& global = result.model;
    result.model = detail::communication_round(
        clients, cfg.parallel_clients,
        [&](std::size_t k) {
          return local_update_cr(clients[k], global, cfg,
                                 derive_seed(seed, 0x10ca1, static_cast<std::uint64_t>(c),
                                             static_cast<std::uint64_t>(clients[k].client_id)));
        },
        log);
    detail::fill_metrics(log, result.model, eval);
    result.logs.push_back(std::move(log));
  }
  return result;
}

struct StreamTrainResult {
  ModelParams model;                        // final apprentice
  std::vector<RoundLog> logs;               // incremental_rounds per stream batch
  std::vector<ModelParams> expert_snapshots;  // expert after each stream batch
};

// Incremental training over the stream: a fresh apprentice (or a copy of the
// expert when warm starting) runs incremental_rounds rounds per batch, then
// the expert is replaced by a snapshot of the apprentice.
inline StreamTrainResult train_apprentice_stream(
    const ModelParams& expert, const std::vector<std::vector<ClientView>>& stream_clients,
    const FedMobileConfig& cfg, const ArchitectureSpec& arch, std::uint64_t seed,
    const EvalData* eval = nullptr) {
  cfg.validate();
  expert.validate();
  StreamTrainResult result;
  result.model = cfg.warm_start_apprentice ? expert : xavier_init(arch, derive_seed(seed, 0xa493));
  ModelParams teacher = expert;
  int round_index = 0;
  for (std::size_t t = 0; t < stream_clients.size(); ++t) {
    for (int c = 1; c <= cfg.incremental_rounds; ++c) {
      RoundLog log;
      log.round = ++round_index;
      log.phase = Phase::Incremental;
      log.stream_t = static_cast<int>(t);
      const ModelParams& global = result.model;
      result.model = detail::communication_round(
          stream_clients[t], cfg.parallel_clients,
          [&](std::size_t k) {
            return incremental_local_update_cr(
                stream_clients[t][k], global, teacher, cfg,
                derive_seed(seed, 0x57e9,
                            (static_cast<std::uint64_t>(t) << 24) | static_cast<std::uint64_t>(c),
                            static_cast<std::uint64_t>(stream_clients[t][k].client_id)));
          },
          log);
      detail::fill_metrics(log, result.model, eval);
      result.logs.push_back(std::move(log));
    }
    teacher = result.model;
    result.expert_snapshots.push_back(teacher);
  }
  return result;
}

// Single-worker semi-supervised training on the pooled data; one epoch is
// logged as one round. Each epoch runs through the same machinery as a
// one-client local update (so one-client FedAvg with SGD is bit-identical),
// but the optimizer state persists across epochs.
inline TrainResult centralized_train(const std::vector<const Sample*>& labeled,
                                     const std::vector<const Sample*>& unlabeled,
                                     const FedMobileConfig& cfg, const ArchitectureSpec& arch,
                                     std::uint64_t seed, const EvalData* eval = nullptr) {
  cfg.validate();
  if (labeled.empty()) throw ConfigError("centralized_train: no labeled data");
  TrainResult result;
  result.model = xavier_init(arch, derive_seed(seed, 0xe277));

  ClientView pool;
  pool.client_id = 0;
  pool.labeled = labeled;
  pool.unlabeled = unlabeled;

  OptimizerState opt;
  opt.kind = cfg.optimizer;
  opt.learning_rate = cfg.learning_rate;
  opt.weight_decay = cfg.weight_decay;

  FedMobileConfig epoch_cfg = cfg;
  epoch_cfg.local_epochs = 1;

  const int epochs = cfg.centralized_epochs > 0 ? cfg.centralized_epochs : cfg.expert_rounds;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    RoundLog log;
    log.round = epoch;
    log.phase = Phase::Centralized;
    detail::StepContext ctx;
    ctx.persistent_opt = &opt;
    LocalUpdateResult r = detail::run_local_update(
        pool, result.model, epoch_cfg, cfg.learning_rate,
        derive_seed(seed, 0x10ca1, static_cast<std::uint64_t>(epoch), 0), ctx);
    result.model = std::move(r.weights);
    log.mean_loss = r.mean_loss;
    log.participating_clients = 1;
    detail::fill_metrics(log, result.model, eval);
    result.logs.push_back(std::move(log));
  }
  return result;
}

// Supervised FedAvg baseline: expert training with the CR coefficient forced
// to 0 and the unlabeled pools dropped.
inline TrainResult fedavg_supervised(const std::vector<ClientView>& clients,
                                     const FedMobileConfig& cfg, const ArchitectureSpec& arch,
                                     std::uint64_t seed, const EvalData* eval = nullptr) {
  FedMobileConfig supervised = cfg;
  supervised.loss.lambda = 0.0;
  std::vector<ClientView> labeled_only = clients;
  for (auto& c : labeled_only) c.unlabeled.clear();
  return train_expert(labeled_only, supervised, arch, seed, eval);
}

struct FedSemResult {
  ModelParams model;
  std::vector<RoundLog> logs;
};

// FedSem with fine-tuning: supervised FedAvg for step 1, then per stream batch
// pseudo-label the unlabeled samples whose confidence clears the threshold and
// fine-tune (no distillation, no CR) for incremental_rounds rounds.
inline FedSemResult fedsem_ft(const std::vector<ClientView>& step1_clients,
                              const std::vector<std::vector<ClientView>>& stream_clients,
                              const FedMobileConfig& cfg, const ArchitectureSpec& arch,
                              std::uint64_t seed, const EvalData* eval = nullptr) {
  cfg.validate();
  FedSemResult result;
  TrainResult base = fedavg_supervised(step1_clients, cfg, arch, seed, eval);
  result.model = std::move(base.model);
  result.logs = std::move(base.logs);

  FedMobileConfig ft_cfg = cfg;
  ft_cfg.loss.lambda = 0.0;
  if (cfg.incremental_learning_rate > 0.0) ft_cfg.learning_rate = cfg.incremental_learning_rate;

  int round_index = static_cast<int>(result.logs.size());
  for (std::size_t t = 0; t < stream_clients.size(); ++t) {
    // Pseudo-label with the current global model, once per stream batch.
    std::vector<std::vector<Sample>> pseudo_store(stream_clients[t].size());
    std::size_t pseudo_count = 0;
    for (std::size_t k = 0; k < stream_clients[t].size(); ++k) {
      const auto& view = stream_clients[t][k];
      if (view.unlabeled.empty()) continue;
      detail::BatchForward fwd = detail::forward_batch(result.model, view.unlabeled);
      DenseMatrix probs = softmax_rows(fwd.logits);
      for (std::size_t i = 0; i < view.unlabeled.size(); ++i) {
        std::size_t best = 0;
        for (std::size_t c = 1; c < probs.cols; ++c)
          if (probs.at(i, c) > probs.at(i, best)) best = c;
        if (probs.at(i, best) >= cfg.pseudo_label_threshold) {
          Sample s = *view.unlabeled[i];
          s.label = static_cast<int>(best);
          pseudo_store[k].push_back(std::move(s));
        }
      }
      pseudo_count += pseudo_store[k].size();
    }

    std::vector<ClientView> ft_clients = stream_clients[t];
    for (std::size_t k = 0; k < ft_clients.size(); ++k) {
      ft_clients[k].unlabeled.clear();
      for (const auto& s : pseudo_store[k]) ft_clients[k].labeled.push_back(&s);
    }

    for (int c = 1; c <= cfg.incremental_rounds; ++c) {
      RoundLog log;
      log.round = ++round_index;
      log.phase = Phase::FineTune;
      log.stream_t = static_cast<int>(t);
      log.pseudo_labels = pseudo_count;
      const ModelParams& global = result.model;
      result.model = detail::communication_round(
          ft_clients, cfg.parallel_clients,
          [&](std::size_t k) {
            return local_update_cr(ft_clients[k], global, ft_cfg,
                                   derive_seed(seed, 0xf17e,
                                               (static_cast<std::uint64_t>(t) << 24) |
                                                   static_cast<std::uint64_t>(c),
                                               static_cast<std::uint64_t>(
                                                   ft_clients[k].client_id)));
          },
          log);
      detail::fill_metrics(log, result.model, eval);
      result.logs.push_back(std::move(log));
    }
  }
  return result;
}

}  // namespace fedmobile
