#pragma once

// Fréchet-Hoeffding joint bounds, Williamson-Downs difference bounds,
// averaging over the conditioning variable, and quantile inversion.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "dte/distributions.hpp"
#include "dte/errors.hpp"

namespace dte {

struct BoundCurve {
  std::vector<double> delta_grid;
  std::vector<double> lower;
  std::vector<double> upper;
  // Size of the largest adjustment applied by the final monotonization in
  // delta; flagged when it exceeds 1e-3 (grid noise guard).
  double monotonize_correction = 0.0;
  bool monotonize_flagged = false;
};

struct QuantileBounds {
  std::vector<double> tau_grid;
  std::vector<double> lower;
  std::vector<double> upper;
  // False where the curve never attains tau on its grid (value is +/-inf).
  std::vector<char> lower_defined;
  std::vector<char> upper_defined;
};

struct JointBoundSurface {
  std::vector<double> y1_grid;
  std::vector<double> y0_grid;
  std::vector<double> lower;  // row-major, y1 index major
  std::vector<double> upper;

  double lower_at(std::size_t i, std::size_t j) const {
    return lower[i * y0_grid.size() + j];
  }
  double upper_at(std::size_t i, std::size_t j) const {
    return upper[i * y0_grid.size() + j];
  }
};

struct ProbBounds {
  double lower = 0.0;
  double upper = 1.0;
};

inline ProbBounds fh_conditional(double F1, double F0) {
  return ProbBounds{std::max(F1 + F0 - 1.0, 0.0), std::min(F1, F0)};
}

// A marginal used where a conditional law is expected (conditioning ignored).
class MarginalLaw : public ConditionalLaw {
 public:
  explicit MarginalLaw(StepDistribution d) : d_(std::move(d)) {}
  void eval_sorted(double, const std::vector<double>& ys,
                   std::vector<double>& out) const override {
    step_eval_sorted(d_.support(), d_.cdf_values(), ys, out);
  }
  const StepDistribution& dist() const { return d_; }

 private:
  StepDistribution d_;
};

// Adapts a closed-form conditional CDF (y, cond) -> prob.
class FunctionLaw : public ConditionalLaw {
 public:
  explicit FunctionLaw(std::function<double(double, double)> f)
      : f_(std::move(f)) {}
  void eval_sorted(double cond, const std::vector<double>& ys,
                   std::vector<double>& out) const override {
    out.resize(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i) out[i] = f_(ys[i], cond);
  }

 private:
  std::function<double(double, double)> f_;
};

inline JointBoundSurface joint_bounds(const ConditionalLaw& F1_cond,
                                      const ConditionalLaw& F0_cond,
                                      const std::vector<double>& cond_values,
                                      const std::vector<double>& y1_grid,
                                      const std::vector<double>& y0_grid) {
  if (cond_values.empty())
    throw InsufficientDataError("joint_bounds: no conditioning values");
  JointBoundSurface out;
  out.y1_grid = y1_grid;
  out.y0_grid = y0_grid;
  out.lower.assign(y1_grid.size() * y0_grid.size(), 0.0);
  out.upper.assign(y1_grid.size() * y0_grid.size(), 0.0);
  std::vector<double> f1, f0;
  for (double c : cond_values) {
    F1_cond.eval_sorted(c, y1_grid, f1);
    F0_cond.eval_sorted(c, y0_grid, f0);
    for (std::size_t i = 0; i < y1_grid.size(); ++i)
      for (std::size_t j = 0; j < y0_grid.size(); ++j) {
        const ProbBounds b = fh_conditional(f1[i], f0[j]);
        out.lower[i * y0_grid.size() + j] += b.lower;
        out.upper[i * y0_grid.size() + j] += b.upper;
      }
  }
  const double w = 1.0 / static_cast<double>(cond_values.size());
  for (double& v : out.lower) v *= w;
  for (double& v : out.upper) v *= w;
  return out;
}

namespace detail {

// Grid sup/inf of F1(y) - F0(y - delta) from CDF values tabulated on y_grid.
// Step-interpolates F0 at the shifted points, which is exact whenever F0's
// jump points are contained in y_grid.
inline ProbBounds wd_from_arrays(const std::vector<double>& f1,
                                 const std::vector<double>& f0,
                                 const std::vector<double>& y_grid,
                                 double delta) {
  double dmax = 0.0;  // sup of the difference, floored at 0
  double dmin = 0.0;  // inf of the difference, capped at 0
  long j = -1;
  const long m = static_cast<long>(y_grid.size());
  for (long i = 0; i < m; ++i) {
    const double shifted = y_grid[static_cast<std::size_t>(i)] - delta;
    while (j + 1 < m && y_grid[static_cast<std::size_t>(j + 1)] <= shifted) ++j;
    const double d = f1[static_cast<std::size_t>(i)] -
                     (j >= 0 ? f0[static_cast<std::size_t>(j)] : 0.0);
    if (d > dmax) dmax = d;
    if (d < dmin) dmin = d;
  }
  return ProbBounds{dmax, 1.0 + dmin};
}

}  // namespace detail

inline ProbBounds wd_conditional(const std::function<double(double)>& F1_at,
                                 const std::function<double(double)>& F0_at,
                                 double delta,
                                 const std::vector<double>& y_grid) {
  if (y_grid.size() < 2)
    throw ConfigError("wd_conditional: y grid needs at least 2 points");
  double dmax = 0.0, dmin = 0.0;
  for (double y : y_grid) {
    const double d = F1_at(y) - F0_at(y - delta);
    if (d > dmax) dmax = d;
    if (d < dmin) dmin = d;
  }
  return ProbBounds{dmax, 1.0 + dmin};
}

namespace detail {

inline void finalize_curve(BoundCurve& curve, double flag_tol = 1e-3) {
  auto correct = [&](std::vector<double>& v) {
    std::vector<double> m = rearrange_monotone(v);
    for (std::size_t i = 0; i < v.size(); ++i)
      curve.monotonize_correction =
          std::max(curve.monotonize_correction, std::abs(m[i] - v[i]));
    v = std::move(m);
  };
  correct(curve.lower);
  correct(curve.upper);
  curve.monotonize_flagged = curve.monotonize_correction > flag_tol;
}

}  // namespace detail

// Equal-weight average of the conditional WD bounds over the target group's
// observed conditioning values, monotonized across delta.
inline BoundCurve dote_bounds(const ConditionalLaw& F1_cond,
                              const ConditionalLaw& F0_cond,
                              const std::vector<double>& cond_values,
                              const std::vector<double>& delta_grid,
                              const std::vector<double>& y_grid) {
  if (cond_values.empty())
    throw InsufficientDataError("dote_bounds: no conditioning values");
  if (y_grid.size() < 2)
    throw ConfigError("dote_bounds: y grid needs at least 2 points");
  BoundCurve curve;
  curve.delta_grid = delta_grid;
  curve.lower.assign(delta_grid.size(), 0.0);
  curve.upper.assign(delta_grid.size(), 0.0);
  std::vector<double> f1, f0;
  for (double c : cond_values) {
    F1_cond.eval_sorted(c, y_grid, f1);
    F0_cond.eval_sorted(c, y_grid, f0);
    for (std::size_t k = 0; k < delta_grid.size(); ++k) {
      const ProbBounds b = detail::wd_from_arrays(f1, f0, y_grid, delta_grid[k]);
      curve.lower[k] += b.lower;
      curve.upper[k] += b.upper;
    }
  }
  const double w = 1.0 / static_cast<double>(cond_values.size());
  for (double& v : curve.lower) v *= w;
  for (double& v : curve.upper) v *= w;
  detail::finalize_curve(curve);
  return curve;
}

inline BoundCurve wd_baseline(const StepDistribution& F1,
                              const StepDistribution& F0,
                              const std::vector<double>& delta_grid,
                              const std::vector<double>& y_grid) {
  if (y_grid.size() < 2)
    throw ConfigError("wd_baseline: y grid needs at least 2 points");
  BoundCurve curve;
  curve.delta_grid = delta_grid;
  curve.lower.resize(delta_grid.size());
  curve.upper.resize(delta_grid.size());
  std::vector<double> f1, f0;
  step_eval_sorted(F1.support(), F1.cdf_values(), y_grid, f1);
  step_eval_sorted(F0.support(), F0.cdf_values(), y_grid, f0);
  for (std::size_t k = 0; k < delta_grid.size(); ++k) {
    const ProbBounds b = detail::wd_from_arrays(f1, f0, y_grid, delta_grid[k]);
    curve.lower[k] = b.lower;
    curve.upper[k] = b.upper;
  }
  detail::finalize_curve(curve);
  return curve;
}

// QoTE^L(tau) = inf{delta : upper(delta) >= tau},
// QoTE^U(tau) = inf{delta : lower(delta) >= tau}.
inline QuantileBounds qote_bounds(const BoundCurve& curve,
                                  const std::vector<double>& tau_grid) {
  QuantileBounds q;
  q.tau_grid = tau_grid;
  const double inf = std::numeric_limits<double>::infinity();
  auto invert = [&](const std::vector<double>& v, double tau, char* ok) {
    auto it = std::lower_bound(v.begin(), v.end(), tau);
    if (it == v.end()) {
      *ok = 0;
      return inf;
    }
    *ok = 1;
    return curve.delta_grid[static_cast<std::size_t>(it - v.begin())];
  };
  for (double tau : tau_grid) {
    if (!(tau > 0.0 && tau < 1.0))
      throw ConfigError("qote_bounds: tau must lie in (0,1)");
    char okl = 0, oku = 0;
    q.lower.push_back(invert(curve.upper, tau, &okl));
    q.upper.push_back(invert(curve.lower, tau, &oku));
    q.lower_defined.push_back(okl);
    q.upper_defined.push_back(oku);
  }
  return q;
}

// 201 equispaced deltas spanning [min(Y1)-max(Y0), max(Y1)-min(Y0)].
inline std::vector<double> default_delta_grid(const StepDistribution& F1,
                                              const StepDistribution& F0,
                                              std::size_t n = 201) {
  if (n < 2) throw ConfigError("delta grid needs at least 2 points");
  const double lo = F1.min() - F0.max();
  const double hi = F1.max() - F0.min();
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i)
    g[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  return g;
}

// Union of the observed supports with |delta| padding on each side, capped by
// quantile thinning.
inline std::vector<double> default_y_grid(const std::vector<double>& y1_support,
                                          const std::vector<double>& y0_support,
                                          double max_abs_delta,
                                          std::size_t cap = 1000) {
  std::vector<double> g;
  g.reserve(y1_support.size() + y0_support.size() + 2);
  g.insert(g.end(), y1_support.begin(), y1_support.end());
  g.insert(g.end(), y0_support.begin(), y0_support.end());
  if (g.empty()) throw ConfigError("default_y_grid: empty supports");
  std::sort(g.begin(), g.end());
  g.erase(std::unique(g.begin(), g.end()), g.end());
  const double pad = std::abs(max_abs_delta);
  g.insert(g.begin(), g.front() - pad - 1e-9);
  g.push_back(g.back() + pad + 1e-9);
  if (g.size() > cap) {
    std::vector<double> thin;
    thin.reserve(cap);
    const std::size_t m = g.size();
    for (std::size_t i = 0; i < cap; ++i) {
      const std::size_t idx =
          (i * (m - 1)) / (cap - 1);  // quantile positions incl. both ends
      if (thin.empty() || g[idx] != thin.back()) thin.push_back(g[idx]);
    }
    g = std::move(thin);
  }
  return g;
}

}  // namespace dte
