#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>
#include <vector>

#include "fedmobile/error.hpp"
#include "fedmobile/matrix.hpp"
#include "fedmobile/model.hpp"

namespace fedmobile {

using ProbVector = std::vector<double>;

inline constexpr double kProbClamp = 1e-12;

// Order of the KL arguments in the distillation term. TeacherToStudent is the
// conventional KL(teacher || student); StudentToTeacher is the reverse.
enum class KdDirection { TeacherToStudent, StudentToTeacher };

struct LossConfig {
  double lambda = 0.3;       // consistency-regularization coefficient
  double alpha = 0.6;        // distillation balancing weight
  double l2_coeff = 1e-5;    // L2 penalty on weights
  double kd_temperature = 1.0;
  KdDirection kd_direction = KdDirection::TeacherToStudent;
  bool cr_stop_gradient_clean = false;  // stop gradient on the clean branch

  // lambda = 0 and alpha in {0, 1} are accepted so sweeps and the reduction
  // identities can evaluate the endpoints.
  void validate() const {
    if (lambda < 0.0 || lambda >= 1.0) throw ConfigError("loss: lambda must be in [0, 1)");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("loss: alpha must be in [0, 1]");
    if (l2_coeff < 0.0) throw ConfigError("loss: l2_coeff must be >= 0");
    if (kd_temperature <= 0.0) throw ConfigError("loss: kd_temperature must be > 0");
  }
};

struct LossBreakdown {
  double ce = 0.0;
  double cr = 0.0;   // includes the lambda factor
  double kd = 0.0;   // raw KL, alpha applied in total
  double reg = 0.0;
  double total = 0.0;
};

inline bool is_prob_vector(const ProbVector& p, double tol = 1e-9) {
  double sum = 0.0;
  for (double v : p) {
    if (v < 0.0 || v > 1.0) return false;
    sum += v;
  }
  return std::abs(sum - 1.0) <= tol;
}

// Numerically stabilized softmax (max subtraction).
inline ProbVector softmax(const std::vector<double>& logits) {
  if (logits.empty()) throw DimensionError("softmax: empty logits");
  double max_logit = *std::max_element(logits.begin(), logits.end());
  ProbVector p(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - max_logit);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

inline DenseMatrix softmax_rows(const DenseMatrix& logits, double temperature = 1.0) {
  if (logits.cols == 0 && logits.rows > 0) throw DimensionError("softmax: empty logits");
  DenseMatrix out(logits.rows, logits.cols);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    double max_logit = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < logits.cols; ++c)
      max_logit = std::max(max_logit, logits.at(r, c) / temperature);
    double sum = 0.0;
    for (std::size_t c = 0; c < logits.cols; ++c) {
      double e = std::exp(logits.at(r, c) / temperature - max_logit);
      out.at(r, c) = e;
      sum += e;
    }
    for (std::size_t c = 0; c < logits.cols; ++c) out.at(r, c) /= sum;
  }
  return out;
}

// -ln(pred[label]) with the probability clamped at kProbClamp.
inline double cross_entropy(const ProbVector& pred, std::size_t label) {
  if (label >= pred.size())
    throw InputError("cross_entropy: label " + std::to_string(label) + " out of range");
  return -std::log(std::max(pred[label], kProbClamp));
}

// KL(p || q) with both operands clamped at kProbClamp. The clamp can leave a
// tiny negative residue, never below -1e-9 for valid inputs.
inline double kl_divergence(const ProbVector& p, const ProbVector& q) {
  if (p.size() != q.size()) throw InputError("kl_divergence: dimension mismatch");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    double pi = std::max(p[i], kProbClamp);
    double qi = std::max(q[i], kProbClamp);
    kl += pi * std::log(pi / qi);
  }
  return kl;
}

namespace detail {

inline double kl_rows_mean(const DenseMatrix& p, const DenseMatrix& q) {
  double total = 0.0;
  ProbVector pr(p.cols), qr(q.cols);
  for (std::size_t r = 0; r < p.rows; ++r) {
    for (std::size_t c = 0; c < p.cols; ++c) {
      pr[c] = p.at(r, c);
      qr[c] = q.at(r, c);
    }
    total += kl_divergence(pr, qr);
  }
  return total / static_cast<double>(p.rows);
}

}  // namespace detail

// Consistency regularization: lambda * KL(softmax(clean) || softmax(perturbed)),
// averaged over the unlabeled batch. An empty batch contributes nothing.
inline double cr_loss(const DenseMatrix& clean_logits, const DenseMatrix& perturbed_logits,
                      double lambda) {
  if (!clean_logits.same_shape(perturbed_logits))
    throw InputError("cr_loss: logit shape mismatch");
  if (clean_logits.rows == 0) return 0.0;
  return lambda * detail::kl_rows_mean(softmax_rows(clean_logits), softmax_rows(perturbed_logits));
}

// Distillation loss between apprentice and expert logits on the same inputs,
// batch-averaged, with temperature scaling. The expert side is a constant:
// no gradient ever flows into it.
inline double kd_loss(const DenseMatrix& apprentice_logits, const DenseMatrix& expert_logits,
                      double temperature = 1.0,
                      KdDirection direction = KdDirection::TeacherToStudent) {
  if (!apprentice_logits.same_shape(expert_logits))
    throw InputError("kd_loss: logit shape mismatch");
  if (apprentice_logits.rows == 0) return 0.0;
  DenseMatrix student = softmax_rows(apprentice_logits, temperature);
  DenseMatrix teacher = softmax_rows(expert_logits, temperature);
  return direction == KdDirection::TeacherToStudent ? detail::kl_rows_mean(teacher, student)
                                                    : detail::kl_rows_mean(student, teacher);
}

// coeff * sum of squared weights; biases excluded.
inline double l2_reg(const ModelParams& params, double coeff) {
  if (coeff < 0.0) throw ConfigError("l2_reg: coeff must be >= 0");
  if (coeff == 0.0) return 0.0;
  double sum = 0.0;
  for (const auto& layer : params.layers)
    for (double w : layer.weight.values) sum += w * w;
  return coeff * sum;
}

// ----- logit-space gradients ------------------------------------------------

// Gradient of the batch-mean cross entropy composed with softmax:
// (softmax(z) - onehot(y)) / N.
inline DenseMatrix ce_logit_grad(const DenseMatrix& logits, const std::vector<int>& labels) {
  if (logits.rows != labels.size()) throw InputError("ce_logit_grad: batch size mismatch");
  DenseMatrix g = softmax_rows(logits);
  const double inv_n = 1.0 / static_cast<double>(logits.rows);
  for (std::size_t r = 0; r < logits.rows; ++r) {
    int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols)
      throw InputError("ce_logit_grad: label out of range");
    g.at(r, static_cast<std::size_t>(y)) -= 1.0;
    for (std::size_t c = 0; c < logits.cols; ++c) g.at(r, c) *= inv_n;
  }
  return g;
}

namespace detail {

// d KL(P || Q) / d b where Q = softmax(b): Q - P.
inline DenseMatrix kl_grad_wrt_q_logits(const DenseMatrix& p, const DenseMatrix& q) {
  DenseMatrix g = q;
  for (std::size_t i = 0; i < g.values.size(); ++i) g.values[i] -= p.values[i];
  return g;
}

// d KL(P || Q) / d a where P = softmax(a): p_j * (ln(p_j / q_j) - KL_row).
inline DenseMatrix kl_grad_wrt_p_logits(const DenseMatrix& p, const DenseMatrix& q) {
  DenseMatrix g(p.rows, p.cols);
  for (std::size_t r = 0; r < p.rows; ++r) {
    double kl_row = 0.0;
    for (std::size_t c = 0; c < p.cols; ++c) {
      double pi = std::max(p.at(r, c), kProbClamp);
      double qi = std::max(q.at(r, c), kProbClamp);
      kl_row += pi * std::log(pi / qi);
    }
    for (std::size_t c = 0; c < p.cols; ++c) {
      double pi = std::max(p.at(r, c), kProbClamp);
      double qi = std::max(q.at(r, c), kProbClamp);
      g.at(r, c) = p.at(r, c) * (std::log(pi / qi) - kl_row);
    }
  }
  return g;
}

}  // namespace detail

struct CrLogitGrads {
  DenseMatrix clean;
  DenseMatrix perturbed;
};

// Gradients of cr_loss w.r.t. both logit batches. By default both branches
// receive gradient; the stop-gradient-on-clean variant zeroes the clean side.
inline CrLogitGrads cr_logit_grads(const DenseMatrix& clean_logits,
                                   const DenseMatrix& perturbed_logits, double lambda,
                                   bool stop_gradient_clean = false) {
  if (!clean_logits.same_shape(perturbed_logits))
    throw InputError("cr_logit_grads: logit shape mismatch");
  CrLogitGrads out;
  out.clean = DenseMatrix(clean_logits.rows, clean_logits.cols);
  out.perturbed = DenseMatrix(clean_logits.rows, clean_logits.cols);
  if (clean_logits.rows == 0 || lambda == 0.0) return out;

  DenseMatrix p = softmax_rows(clean_logits);
  DenseMatrix q = softmax_rows(perturbed_logits);
  const double scale = lambda / static_cast<double>(clean_logits.rows);
  out.perturbed = detail::kl_grad_wrt_q_logits(p, q);
  scale_inplace(out.perturbed, scale);
  if (!stop_gradient_clean) {
    out.clean = detail::kl_grad_wrt_p_logits(p, q);
    scale_inplace(out.clean, scale);
  }
  return out;
}

// Gradient of kd_loss w.r.t. the apprentice logits (the expert is frozen).
inline DenseMatrix kd_logit_grad(const DenseMatrix& apprentice_logits,
                                 const DenseMatrix& expert_logits, double temperature = 1.0,
                                 KdDirection direction = KdDirection::TeacherToStudent) {
  if (!apprentice_logits.same_shape(expert_logits))
    throw InputError("kd_logit_grad: logit shape mismatch");
  if (apprentice_logits.rows == 0)
    return DenseMatrix(0, apprentice_logits.cols);
  DenseMatrix student = softmax_rows(apprentice_logits, temperature);
  DenseMatrix teacher = softmax_rows(expert_logits, temperature);
  DenseMatrix g = direction == KdDirection::TeacherToStudent
                      ? detail::kl_grad_wrt_q_logits(teacher, student)
                      : detail::kl_grad_wrt_p_logits(student, teacher);
  scale_inplace(g, 1.0 / (temperature * static_cast<double>(apprentice_logits.rows)));
  return g;
}

// Gradient of l2_reg w.r.t. the weights: 2 * coeff * W, biases zero.
inline ModelParams l2_reg_grad(const ModelParams& params, double coeff) {
  ModelParams g = zeros_like(params);
  if (coeff == 0.0) return g;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    g.layers[l].weight = params.layers[l].weight;
    scale_inplace(g.layers[l].weight, 2.0 * coeff);
  }
  return g;
}

// ----- composite losses ------------------------------------------------------

// Expert-phase objective: CE on the labeled batch + consistency regularization
// on the unlabeled batch + L2.
inline LossBreakdown expert_step_loss(const DenseMatrix& labeled_logits,
                                      const std::vector<int>& labels,
                                      const DenseMatrix& unlabeled_clean_logits,
                                      const DenseMatrix& unlabeled_perturbed_logits,
                                      const ModelParams& params, const LossConfig& cfg) {
  if (labeled_logits.rows == 0) throw InputError("expert_step_loss: empty labeled batch");
  if (labeled_logits.rows != labels.size())
    throw InputError("expert_step_loss: labels size mismatch");
  LossBreakdown b;
  DenseMatrix probs = softmax_rows(labeled_logits);
  ProbVector row(labeled_logits.cols);
  for (std::size_t r = 0; r < probs.rows; ++r) {
    for (std::size_t c = 0; c < probs.cols; ++c) row[c] = probs.at(r, c);
    b.ce += cross_entropy(row, static_cast<std::size_t>(labels[r]));
  }
  b.ce /= static_cast<double>(labeled_logits.rows);
  b.cr = cr_loss(unlabeled_clean_logits, unlabeled_perturbed_logits, cfg.lambda);
  b.reg = l2_reg(params, cfg.l2_coeff);
  b.total = b.ce + b.cr + b.reg;
  return b;
}

// Incremental-phase objective: (1 - alpha) * CE + alpha * KD + CR + L2, with
// the expert logits coming from the frozen expert on the same labeled inputs.
inline LossBreakdown incremental_step_loss(const DenseMatrix& labeled_logits,
                                           const std::vector<int>& labels,
                                           const DenseMatrix& expert_logits,
                                           const DenseMatrix& unlabeled_clean_logits,
                                           const DenseMatrix& unlabeled_perturbed_logits,
                                           const ModelParams& params, const LossConfig& cfg) {
  LossBreakdown b = expert_step_loss(labeled_logits, labels, unlabeled_clean_logits,
                                     unlabeled_perturbed_logits, params, cfg);
  b.kd = kd_loss(labeled_logits, expert_logits, cfg.kd_temperature, cfg.kd_direction);
  b.total = (1.0 - cfg.alpha) * b.ce + cfg.alpha * b.kd + b.cr + b.reg;
  return b;
}

}  // namespace fedmobile
