#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "fedmobile/model.hpp"
#include "fedmobile/rng.hpp"

namespace fedmobile {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  std::size_t max_coords = 0;  // 0 = every coordinate, otherwise a seeded subset
  std::uint64_t seed = 0;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t coords_checked = 0;
  std::size_t worst_layer = 0;
  bool worst_is_bias = false;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed(double tolerance) const { return max_rel_error < tolerance; }
};

namespace detail {

struct CoordRef {
  std::size_t layer;
  bool is_bias;
  std::size_t index;
};

inline double& coord(ModelParams& p, const CoordRef& c) {
  return c.is_bias ? p.layers[c.layer].bias[c.index] : p.layers[c.layer].weight.values[c.index];
}

inline double coord(const ModelParams& p, const CoordRef& c) {
  return c.is_bias ? p.layers[c.layer].bias[c.index] : p.layers[c.layer].weight.values[c.index];
}

}  // namespace detail

// Central-difference check of an analytic gradient. `loss` maps ModelParams to
// a scalar and must be deterministic (perturbations fixed up front); `grad`
// returns the analytic gradient at the same point. Relative error uses
// max(|analytic|, |numeric|, 1e-6) as denominator.
template <typename LossFn, typename GradFn>
GradCheckReport finite_diff_check(const ModelParams& params, LossFn&& loss, GradFn&& grad,
                                  GradCheckOptions opts = {}) {
  std::vector<detail::CoordRef> coords;
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    for (std::size_t i = 0; i < params.layers[l].weight.values.size(); ++i)
      coords.push_back({l, false, i});
    for (std::size_t i = 0; i < params.layers[l].bias.size(); ++i)
      coords.push_back({l, true, i});
  }
  if (opts.max_coords > 0 && coords.size() > opts.max_coords) {
    Rng rng(derive_seed(opts.seed, 0x6add));
    rng.shuffle(coords);
    coords.resize(opts.max_coords);
  }

  const ModelParams analytic = grad(params);
  GradCheckReport report;
  ModelParams probe = params;
  for (const auto& c : coords) {
    const double original = detail::coord(probe, c);
    detail::coord(probe, c) = original + opts.step;
    const double plus = loss(probe);
    detail::coord(probe, c) = original - opts.step;
    const double minus = loss(probe);
    detail::coord(probe, c) = original;

    const double numeric = (plus - minus) / (2.0 * opts.step);
    const double a = detail::coord(analytic, c);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    const double rel = std::abs(a - numeric) / denom;
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_layer = c.layer;
      report.worst_is_bias = c.is_bias;
      report.worst_index = c.index;
      report.worst_analytic = a;
      report.worst_numeric = numeric;
    }
    ++report.coords_checked;
  }
  return report;
}

}  // namespace fedmobile
