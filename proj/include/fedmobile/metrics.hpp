#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <vector>

#include "fedmobile/error.hpp"

namespace fedmobile {

struct ConfusionCounts {
  std::size_t tp = 0, tn = 0, fp = 0, fn = 0;
  std::size_t total() const { return tp + tn + fp + fn; }
};

struct MetricsReport {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double pr_auc = 0.0;
  ConfusionCounts counts;
};

// Binary confusion counts; the positive class is class 1.
inline ConfusionCounts confusion(const std::vector<int>& predicted,
                                 const std::vector<int>& labels) {
  if (predicted.size() != labels.size()) throw InputError("confusion: length mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const bool pos_pred = predicted[i] == 1;
    const bool pos_true = labels[i] == 1;
    if (pos_pred && pos_true) c.tp++;
    else if (pos_pred && !pos_true) c.fp++;
    else if (!pos_pred && pos_true) c.fn++;
    else c.tn++;
  }
  return c;
}

struct PrecisionRecallF1 {
  double precision = 0.0, recall = 0.0, f1 = 0.0;
};

// Zero denominators yield 0 by convention (affects degenerate early rounds).
inline PrecisionRecallF1 precision_recall_f1(const ConfusionCounts& c) {
  PrecisionRecallF1 out;
  if (c.tp + c.fp > 0) out.precision = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fp);
  if (c.tp + c.fn > 0) out.recall = static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
  if (out.precision + out.recall > 0.0)
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  return out;
}

struct PrCurvePoint {
  std::size_t rank = 0;
  double precision = 0.0;
  double recall = 0.0;
};

// One point per distinct threshold along the descending-score sweep. Tied
// scores enter as one step, which also makes the curve independent of input
// order among ties.
inline std::vector<PrCurvePoint> pr_curve(const std::vector<double>& scores,
                                          const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw InputError("pr_curve: length mismatch");
  std::size_t positives = static_cast<std::size_t>(
      std::count(labels.begin(), labels.end(), 1));
  if (positives == 0) throw InputError("pr_curve: no positive labels, metric undefined");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

  std::vector<PrCurvePoint> curve;
  std::size_t tp = 0;
  std::size_t k = 0;
  while (k < order.size()) {
    std::size_t group_end = k;
    while (group_end < order.size() && scores[order[group_end]] == scores[order[k]]) {
      if (labels[order[group_end]] == 1) ++tp;
      ++group_end;
    }
    curve.push_back({group_end, static_cast<double>(tp) / static_cast<double>(group_end),
                     static_cast<double>(tp) / static_cast<double>(positives)});
    k = group_end;
  }
  return curve;
}

// Average precision with step interpolation: AP = sum_k (R_k - R_{k-1}) * P_k
// over the distinct-threshold curve.
inline double pr_auc(const std::vector<double>& scores, const std::vector<int>& labels) {
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& point : pr_curve(scores, labels)) {
    ap += (point.recall - prev_recall) * point.precision;
    prev_recall = point.recall;
  }
  return ap;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation, n - 1 denominator
};

struct MetricsAggregate {
  MeanStd precision, recall, f1, pr_auc;
  std::size_t n = 0;
};

namespace detail {

inline MeanStd mean_std(const std::vector<double>& values) {
  MeanStd out;
  const double n = static_cast<double>(values.size());
  for (double v : values) out.mean += v;
  out.mean /= n;
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    out.std = std::sqrt(ss / (n - 1.0));
  }
  return out;
}

}  // namespace detail

// Mean and sample standard deviation of each metric across runs.
inline MetricsAggregate aggregate_runs(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InputError("aggregate_runs: empty report list");
  auto collect = [&](auto field) {
    std::vector<double> v;
    v.reserve(reports.size());
    for (const auto& r : reports) v.push_back(field(r));
    return detail::mean_std(v);
  };
  MetricsAggregate agg;
  agg.precision = collect([](const MetricsReport& r) { return r.precision; });
  agg.recall = collect([](const MetricsReport& r) { return r.recall; });
  agg.f1 = collect([](const MetricsReport& r) { return r.f1; });
  agg.pr_auc = collect([](const MetricsReport& r) { return r.pr_auc; });
  agg.n = reports.size();
  return agg;
}

}  // namespace fedmobile
