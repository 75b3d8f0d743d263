#pragma once

// Pointwise confidence bands for bound curves: empirical bootstrap of the
// first-step estimators composed with the numerical delta method.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <vector>

#include "dte/estimator.hpp"

namespace dte {

struct InferenceConfig {
  int n_bootstrap = 500;
  double r = 0.25;  // epsilon_n = n^{-r}
  double alpha = 0.05;
  std::uint64_t seed = 0;
  bool minus_sign = true;  // perturb with F - eps*sqrt(n)*(F_boot - F)
  bool two_sided = false;

  void validate() const {
    if (n_bootstrap < 100)
      throw ConfigError("inference: n_bootstrap must be >= 100");
    if (!(r > 0.0 && r < 0.5))
      throw ConfigError("inference: epsilon exponent r must lie in (0, 1/2)");
    if (!(alpha > 0.0 && alpha < 1.0))
      throw ConfigError("inference: alpha must lie in (0, 1)");
  }
};

// splitmix64; used to derive independent per-replicate streams from
// (seed, index) without correlation between adjacent seeds.
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

namespace detail {

inline std::vector<std::vector<double>> resample_rows(
    const std::vector<std::vector<double>>& m, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> pick(0, m.size() - 1);
  std::vector<std::vector<double>> out;
  out.reserve(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out.push_back(m[pick(rng)]);
  return out;
}

inline bool constant_column(const std::vector<std::vector<double>>& m,
                            std::size_t j) {
  for (std::size_t i = 1; i < m.size(); ++i)
    if (m[i][j] != m[0][j]) return false;
  return true;
}

// A resample is unusable when a column that varied in the original data has
// collapsed to a single value (a conditional fit would be degenerate).
// Columns constant in the original are fine: the fits already handle them.
inline bool usable_resample(const std::vector<std::vector<double>>& m,
                            const std::vector<std::vector<double>>& original) {
  for (std::size_t j = 0; j < m.front().size(); ++j)
    if (constant_column(m, j) && !constant_column(original, j)) return false;
  return true;
}

}  // namespace detail

// Resamples units with replacement independently within each involved group
// and refits every first-step object on each replicate, reusing the point
// fit's regression threshold grids. Deterministic given config.seed.
inline std::vector<FirstSteps> bootstrap_first_steps(
    const GroupMatrices& g, const FirstSteps& base, const EstimatorConfig& est,
    const InferenceConfig& cfg) {
  cfg.validate();
  const bool shared_recovery =
      base.spec.recovery == CicSpec::resolve(base.spec.target).control;
  std::vector<FirstSteps> out;
  out.reserve(static_cast<std::size_t>(cfg.n_bootstrap));
  for (int b = 0; b < cfg.n_bootstrap; ++b) {
    std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(b)));
    GroupMatrices rb;
    bool ok = false;
    for (int attempt = 0; attempt < 10 && !ok; ++attempt) {
      rb.target = detail::resample_rows(g.target, rng);
      rb.control = detail::resample_rows(g.control, rng);
      rb.recovery =
          shared_recovery ? rb.control : detail::resample_rows(g.recovery, rng);
      ok = detail::usable_resample(rb.target, g.target) &&
           detail::usable_resample(rb.control, g.control) &&
           detail::usable_resample(rb.recovery, g.recovery);
    }
    if (!ok)
      throw InsufficientDataError(
          "bootstrap: degenerate resamples after 10 retries");
    out.push_back(fit_first_steps(rb, base.spec, est, &base));
  }
  return out;
}

// F-hat - scale*(F-boot - F-hat) applied to every first-step object (the CiC
// marginal is perturbed as its own object). Sets *degenerate when any
// perturbed CDF collapses.
inline FirstSteps perturb_first_steps(const FirstSteps& base,
                                      const FirstSteps& boot, double scale,
                                      bool* degenerate = nullptr) {
  FirstSteps p = base;
  bool bad = false, d = false;
  auto pert = [&](const StepDistribution& b, const StepDistribution& bo) {
    StepDistribution out = perturb(b, bo, scale, &d);
    bad = bad || d;
    return out;
  };
  p.F_target_prev = pert(base.F_target_prev, boot.F_target_prev);
  p.F_target_last = pert(base.F_target_last, boot.F_target_last);
  p.F_control_prev = pert(base.F_control_prev, boot.F_control_prev);
  p.F_control_last = pert(base.F_control_last, boot.F_control_last);
  p.F0_target_last = pert(base.F0_target_last, boot.F0_target_last);
  p.F_recovery_resp = pert(base.F_recovery_resp, boot.F_recovery_resp);
  p.F_recovery_cond_var =
      pert(base.F_recovery_cond_var, boot.F_recovery_cond_var);
  p.target_cond = base.target_cond.perturbed(
      std::make_shared<ConditionalCDF>(boot.target_cond), scale);
  p.recovery_cond = base.recovery_cond.perturbed(
      std::make_shared<ConditionalCDF>(boot.recovery_cond), scale);
  if (degenerate) *degenerate = bad;
  return p;
}

struct BandEstimate {
  BoundCurve point;
  std::vector<double> c_lower;  // critical values per grid point
  std::vector<double> c_upper;
  std::vector<double> band_lower;
  std::vector<double> band_upper;
  int skipped = 0;
  double epsilon = 0.0;
  std::size_t n = 0;
};

using BoundPipeline = std::function<BoundCurve(const FirstSteps&)>;

// Numerical delta method: per draw, ratio (phi(perturbed) - phi(F-hat)) /
// epsilon_n per grid point; critical values are (1 - alpha) empirical
// quantiles, floored at 0 so bands always contain the point estimate; band
// endpoints phi^L - c^L/sqrt(n) and phi^U + c^U/sqrt(n).
inline BandEstimate numerical_delta(const FirstSteps& fit,
                                    const std::vector<FirstSteps>& boots,
                                    const BoundPipeline& pipeline,
                                    std::size_t n_sample,
                                    const InferenceConfig& cfg) {
  cfg.validate();
  const double n = static_cast<double>(n_sample);
  const double eps = std::pow(n, -cfg.r);
  const double scale = (cfg.minus_sign ? 1.0 : -1.0) * eps * std::sqrt(n);

  BandEstimate be;
  be.point = pipeline(fit);
  be.epsilon = eps;
  be.n = n_sample;
  const std::size_t m = be.point.delta_grid.size();

  std::vector<std::vector<double>> rl(m), ru(m);
  for (const FirstSteps& boot : boots) {
    bool degenerate = false;
    FirstSteps pert = perturb_first_steps(fit, boot, scale, &degenerate);
    if (degenerate) {
      ++be.skipped;
      continue;
    }
    BoundCurve c = pipeline(pert);
    for (std::size_t k = 0; k < m; ++k) {
      rl[k].push_back((c.lower[k] - be.point.lower[k]) / eps);
      ru[k].push_back((c.upper[k] - be.point.upper[k]) / eps);
    }
  }
  if (rl.empty() || rl[0].empty())
    throw InsufficientDataError("numerical delta: all draws skipped");

  auto quant = [](std::vector<double>& v, double q) {
    std::sort(v.begin(), v.end());
    const std::size_t b = v.size();
    std::size_t k = static_cast<std::size_t>(
        std::ceil(q * static_cast<double>(b)));
    if (k < 1) k = 1;
    if (k > b) k = b;
    return v[k - 1];
  };
  const double q = cfg.two_sided ? 1.0 - cfg.alpha / 2.0 : 1.0 - cfg.alpha;
  be.c_lower.resize(m);
  be.c_upper.resize(m);
  be.band_lower.resize(m);
  be.band_upper.resize(m);
  for (std::size_t k = 0; k < m; ++k) {
    be.c_lower[k] = std::max(quant(rl[k], q), 0.0);
    for (double& v : ru[k]) v = -v;
    be.c_upper[k] = std::max(quant(ru[k], q), 0.0);
    be.band_lower[k] = be.point.lower[k] - be.c_lower[k] / std::sqrt(n);
    be.band_upper[k] = be.point.upper[k] + be.c_upper[k] / std::sqrt(n);
  }
  return be;
}

}  // namespace dte
