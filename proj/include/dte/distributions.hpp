#pragma once

// One-dimensional CDF/quantile estimation, distribution regression for
// conditional CDFs, and rank statistics (Kendall's tau, pseudo-observations).

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "dte/errors.hpp"

namespace dte {

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }
inline double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
}

// Acklam's rational approximation of the standard normal quantile,
// refined with one Halley step (relative error well below 1e-9).
inline double normal_quantile(double p) {
  if (p <= 0.0) return -std::numeric_limits<double>::infinity();
  if (p >= 1.0) return std::numeric_limits<double>::infinity();
  static const double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                             -2.759285104469687e+02, 1.383577518672690e+02,
                             -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                             -1.556989798598866e+02, 6.680131188771972e+01,
                             -1.328068155288572e+01};
  static const double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                             -2.400758277161838e+00, -2.549732539343734e+00,
                             4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                             2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;
  double q, x;
  if (p < plow) {
    q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - plow) {
    q = p - 0.5;
    double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  double e = normal_cdf(x) - p;
  double u = e * std::sqrt(2.0 * M_PI) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

// Sorts into nondecreasing order and clips to [0, 1].
inline std::vector<double> rearrange_monotone(std::vector<double> values) {
  std::sort(values.begin(), values.end());
  for (double& v : values) v = std::clamp(v, 0.0, 1.0);
  return values;
}

// Right-continuous step CDF on a finite support with generalized-inverse
// quantiles, quantile(q) = inf{y : F(y) >= q}.
class StepDistribution {
 public:
  StepDistribution() = default;

  StepDistribution(std::vector<double> support, std::vector<double> cdf)
      : support_(std::move(support)), cdf_(std::move(cdf)) {
    if (support_.empty() || support_.size() != cdf_.size())
      throw ConfigError("step distribution: support/cdf size mismatch");
    for (std::size_t i = 0; i < support_.size(); ++i) {
      if (i > 0 && !(support_[i] > support_[i - 1]))
        throw ConfigError("step distribution: support not strictly ascending");
      if (i > 0 && cdf_[i] < cdf_[i - 1] - 1e-12)
        throw ConfigError("step distribution: cdf not nondecreasing");
      if (cdf_[i] < -1e-12 || cdf_[i] > 1.0 + 1e-12)
        throw ConfigError("step distribution: cdf outside [0,1]");
    }
    if (std::abs(cdf_.back() - 1.0) > 1e-9)
      throw ConfigError("step distribution: cdf must end at 1");
    cdf_.back() = 1.0;
  }

  double cdf(double y) const {
    auto it = std::upper_bound(support_.begin(), support_.end(), y);
    if (it == support_.begin()) return 0.0;
    return cdf_[static_cast<std::size_t>(it - support_.begin()) - 1];
  }

  double quantile(double q) const {
    if (q <= 0.0) return support_.front();
    auto it = std::lower_bound(cdf_.begin(), cdf_.end(), q);
    if (it == cdf_.end()) return support_.back();
    return support_[static_cast<std::size_t>(it - cdf_.begin())];
  }

  const std::vector<double>& support() const { return support_; }
  const std::vector<double>& cdf_values() const { return cdf_; }
  double min() const { return support_.front(); }
  double max() const { return support_.back(); }

 private:
  std::vector<double> support_;
  std::vector<double> cdf_;
};

inline StepDistribution ecdf_fit(std::vector<double> sample) {
  if (sample.empty()) throw InsufficientDataError("ecdf: empty sample");
  for (double v : sample)
    if (!std::isfinite(v)) throw DataError("ecdf: non-finite value");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  std::vector<double> support, cdf;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    if (i + 1 < sample.size() && sample[i + 1] == sample[i]) continue;
    support.push_back(sample[i]);
    cdf.push_back(static_cast<double>(i + 1) / n);
  }
  return StepDistribution(std::move(support), std::move(cdf));
}

// F-hat - scale * (F-boot - F-hat), evaluated on the base support, clipped and
// rearranged. Sets *degenerate when the perturbed CDF collapses to a flat
// function after clipping.
inline StepDistribution perturb(const StepDistribution& base,
                                const StepDistribution& boot, double scale,
                                bool* degenerate = nullptr) {
  const auto& s = base.support();
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    double fb = base.cdf_values()[i];
    v[i] = fb - scale * (boot.cdf(s[i]) - fb);
  }
  v = rearrange_monotone(std::move(v));
  v.back() = 1.0;
  if (degenerate) *degenerate = (v.back() - v.front() < 1e-12 && s.size() > 1);
  return StepDistribution(s, std::move(v));
}

// Evaluates the step function defined by (xs, ps) at each ascending query
// point: out[i] = ps[j] with j the largest index such that xs[j] <= ys[i],
// or 0 when ys[i] < xs[0].
inline void step_eval_sorted(const std::vector<double>& xs,
                             const std::vector<double>& ps,
                             const std::vector<double>& ys,
                             std::vector<double>& out) {
  out.resize(ys.size());
  std::size_t j = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    while (j < xs.size() && xs[j] <= ys[i]) ++j;
    out[i] = (j == 0) ? 0.0 : ps[j - 1];
  }
}

// A conditional distribution function y -> F(y | y'). Implementations must be
// nondecreasing in y for every conditioning value.
class ConditionalLaw {
 public:
  virtual ~ConditionalLaw() = default;

  // out[i] = F(ys[i] | cond); ys must be ascending.
  virtual void eval_sorted(double cond, const std::vector<double>& ys,
                           std::vector<double>& out) const = 0;

  double eval(double y, double cond) const {
    std::vector<double> ys{y}, out;
    eval_sorted(cond, ys, out);
    return out[0];
  }
};

enum class Link { Logistic, Probit };

inline double link_cdf(Link link, double eta) {
  return link == Link::Logistic ? 1.0 / (1.0 + std::exp(-eta))
                                : normal_cdf(eta);
}

struct DrConfig {
  int grid_size = 100;
  Link link = Link::Logistic;
  int max_iter = 50;
  double tol = 1e-8;
};

struct ThresholdFit {
  double intercept = 0.0;
  double slope = 0.0;
  bool fallback = false;   // constant-in-y' empirical frequency used instead
  double freq = 0.0;
};

struct DrFitReport {
  int n_thresholds = 0;
  int n_fallbacks = 0;
};

namespace detail {

// Binary regression of z on (1, x) under the given link, by Newton-Raphson on
// standardized x. Returns false on separation or non-convergence.
inline bool binary_regression(const std::vector<double>& x,
                              const std::vector<char>& z, Link link,
                              int max_iter, double tol, double* intercept,
                              double* slope) {
  const std::size_t n = x.size();
  double mx = std::accumulate(x.begin(), x.end(), 0.0) / static_cast<double>(n);
  double sx = 0.0;
  for (double v : x) sx += (v - mx) * (v - mx);
  sx = std::sqrt(sx / static_cast<double>(n));
  if (sx < 1e-12) {
    // Constant regressor: intercept-only fit is exactly the frequency.
    return false;
  }
  double a = 0.0, b = 0.0;
  for (int iter = 0; iter < max_iter; ++iter) {
    double g0 = 0.0, g1 = 0.0, h00 = 0.0, h01 = 0.0, h11 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double xi = (x[i] - mx) / sx;
      const double eta = a + b * xi;
      const double mu = link_cdf(link, eta);
      double w, score;
      if (link == Link::Logistic) {
        w = mu * (1.0 - mu);
        score = static_cast<double>(z[i]) - mu;
      } else {
        const double phi = normal_pdf(eta);
        const double denom = std::max(mu * (1.0 - mu), 1e-10);
        w = phi * phi / denom;
        score = (static_cast<double>(z[i]) - mu) * phi / denom;
      }
      g0 += score;
      g1 += score * xi;
      w = std::max(w, 1e-10);
      h00 += w;
      h01 += w * xi;
      h11 += w * xi * xi;
    }
    const double det = h00 * h11 - h01 * h01;
    if (!(det > 1e-12)) return false;
    const double da = (h11 * g0 - h01 * g1) / det;
    const double db = (h00 * g1 - h01 * g0) / det;
    a += da;
    b += db;
    if (!std::isfinite(a) || !std::isfinite(b)) return false;
    if (std::abs(b) > 30.0) {
      // (Quasi-)separation: the likelihood is maximized in the limit of an
      // ever-steeper link. Cap the standardized slope; the capped fit is
      // numerically an indicator at the separating threshold.
      const double thr = -a / b;
      b = b > 0 ? 30.0 : -30.0;
      a = -thr * b;
      *intercept = a - b * mx / sx;
      *slope = b / sx;
      return true;
    }
    if (std::abs(da) < tol && std::abs(db) < tol) {
      *intercept = a - b * mx / sx;
      *slope = b / sx;
      return true;
    }
  }
  return false;
}

}  // namespace detail

// Conditional CDF from distribution regression: binary regressions of
// 1{response <= y_k} on (1, y') over a threshold grid of response quantiles,
// predictions monotone-rearranged across thresholds. Optionally carries a
// bootstrap refit for numerical-delta perturbation.
class ConditionalCDF : public ConditionalLaw {
 public:
  ConditionalCDF() = default;

  ConditionalCDF(std::vector<double> thresholds, std::vector<ThresholdFit> fits,
                 Link link)
      : thresholds_(std::move(thresholds)), fits_(std::move(fits)), link_(link) {
    if (thresholds_.size() != fits_.size() || thresholds_.empty())
      throw ConfigError("conditional cdf: thresholds/fits mismatch");
  }

  // Per-threshold probabilities at the conditioning value, monotone and in
  // [0, 1].
  std::vector<double> probs(double cond) const {
    std::vector<double> p = raw_probs(cond);
    if (boot_) {
      std::vector<double> pb = boot_->raw_probs(cond);
      for (std::size_t k = 0; k < p.size(); ++k)
        p[k] = p[k] - perturb_scale_ * (pb[k] - p[k]);
    }
    return rearrange_monotone(std::move(p));
  }

  void eval_sorted(double cond, const std::vector<double>& ys,
                   std::vector<double>& out) const override {
    step_eval_sorted(thresholds_, probs(cond), ys, out);
  }

  const std::vector<double>& thresholds() const { return thresholds_; }
  const std::vector<ThresholdFit>& fits() const { return fits_; }
  Link link() const { return link_; }

  DrFitReport report() const {
    DrFitReport r;
    r.n_thresholds = static_cast<int>(fits_.size());
    for (const auto& f : fits_) r.n_fallbacks += f.fallback ? 1 : 0;
    return r;
  }

  // Attaches a bootstrap refit (same thresholds) so evaluations return the
  // perturbed CDF F-hat - scale * (F-boot - F-hat).
  ConditionalCDF perturbed(std::shared_ptr<const ConditionalCDF> boot,
                           double scale) const {
    if (boot->thresholds_ != thresholds_)
      throw ConfigError("perturbed conditional cdf: threshold grids differ");
    ConditionalCDF out(*this);
    out.boot_ = std::move(boot);
    out.perturb_scale_ = scale;
    return out;
  }

 private:
  std::vector<double> raw_probs(double cond) const {
    std::vector<double> p(fits_.size());
    for (std::size_t k = 0; k < fits_.size(); ++k) {
      const auto& f = fits_[k];
      p[k] = f.fallback ? f.freq : link_cdf(link_, f.intercept + f.slope * cond);
    }
    return p;
  }

  std::vector<double> thresholds_;
  std::vector<ThresholdFit> fits_;
  Link link_ = Link::Logistic;
  std::shared_ptr<const ConditionalCDF> boot_;
  double perturb_scale_ = 0.0;
};

// Fits on an explicit threshold grid (used by bootstrap refits so the grids
// stay comparable).
inline ConditionalCDF dr_fit_thresholds(const std::vector<double>& response,
                                        const std::vector<double>& conditioning,
                                        std::vector<double> thresholds,
                                        const DrConfig& cfg = {}) {
  const std::size_t n = response.size();
  if (n != conditioning.size() || n < 2)
    throw InsufficientDataError("distribution regression: need paired samples");
  std::vector<ThresholdFit> fits(thresholds.size());
  std::vector<char> z(n);
  for (std::size_t k = 0; k < thresholds.size(); ++k) {
    std::size_t ones = 0;
    for (std::size_t i = 0; i < n; ++i) {
      z[i] = response[i] <= thresholds[k] ? 1 : 0;
      ones += z[i];
    }
    ThresholdFit f;
    f.freq = static_cast<double>(ones) / static_cast<double>(n);
    if (ones == 0 || ones == n ||
        !detail::binary_regression(conditioning, z, cfg.link, cfg.max_iter,
                                   cfg.tol, &f.intercept, &f.slope)) {
      f.fallback = true;
    }
    fits[k] = f;
  }
  return ConditionalCDF(std::move(thresholds), std::move(fits), cfg.link);
}

inline ConditionalCDF dr_fit(const std::vector<double>& response,
                             const std::vector<double>& conditioning,
                             const DrConfig& cfg = {}) {
  if (cfg.grid_size < 2)
    throw ConfigError("distribution regression: grid_size must be >= 2");
  StepDistribution resp_ecdf = ecdf_fit(response);
  std::vector<double> thresholds;
  thresholds.reserve(static_cast<std::size_t>(cfg.grid_size));
  for (int k = 1; k <= cfg.grid_size; ++k) {
    double t = resp_ecdf.quantile(static_cast<double>(k) /
                                  static_cast<double>(cfg.grid_size));
    if (thresholds.empty() || t > thresholds.back()) thresholds.push_back(t);
  }
  return dr_fit_thresholds(response, conditioning, std::move(thresholds), cfg);
}

// Kendall's tau-b by Knight's O(n log n) algorithm.
inline double kendall_tau(const std::vector<double>& x,
                          const std::vector<double>& y) {
  const std::size_t n = x.size();
  if (n != y.size() || n < 2)
    throw InsufficientDataError("kendall_tau: need paired samples, n >= 2");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    if (x[a] != x[b]) return x[a] < x[b];
    return y[a] < y[b];
  });
  std::vector<double> ys(n);
  for (std::size_t i = 0; i < n; ++i) ys[i] = y[idx[i]];

  auto pair_count = [](std::size_t m) {
    return static_cast<double>(m) * static_cast<double>(m - 1) / 2.0;
  };

  // Ties in x and joint ties, from the (x, y)-sorted order.
  double xtie = 0.0, ntie = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    xtie += pair_count(j - i);
    for (std::size_t a = i; a < j;) {
      std::size_t b = a;
      while (b < j && ys[b] == ys[a]) ++b;
      ntie += pair_count(b - a);
      a = b;
    }
    i = j;
  }

  // Discordant pairs = inversions of ys under a stable merge sort.
  double discordant = 0.0;
  std::vector<double> buf(n);
  std::vector<double> arr = ys;
  for (std::size_t width = 1; width < n; width *= 2) {
    for (std::size_t lo = 0; lo + width < n; lo += 2 * width) {
      const std::size_t mid = lo + width;
      const std::size_t hi = std::min(lo + 2 * width, n);
      std::size_t a = lo, b = mid, k = lo;
      while (a < mid && b < hi) {
        if (arr[b] < arr[a]) {
          discordant += static_cast<double>(mid - a);
          buf[k++] = arr[b++];
        } else {
          buf[k++] = arr[a++];
        }
      }
      while (a < mid) buf[k++] = arr[a++];
      while (b < hi) buf[k++] = arr[b++];
      std::copy(buf.begin() + static_cast<long>(lo),
                buf.begin() + static_cast<long>(hi),
                arr.begin() + static_cast<long>(lo));
    }
  }

  double ytie = 0.0;
  {
    std::vector<double> sy = y;
    std::sort(sy.begin(), sy.end());
    for (std::size_t i = 0; i < n;) {
      std::size_t j = i;
      while (j < n && sy[j] == sy[i]) ++j;
      ytie += pair_count(j - i);
      i = j;
    }
  }

  const double tot = pair_count(n);
  const double denom = std::sqrt((tot - xtie) * (tot - ytie));
  if (!(denom > 0.0))
    throw DataError("kendall_tau: undefined for an all-tied sample");
  const double con_minus_dis = tot - xtie - ytie + ntie - 2.0 * discordant;
  return con_minus_dis / denom;
}

// Average ranks with ties shared, scaled by 1/(n+1).
inline std::vector<double> normalized_ranks(const std::vector<double>& x) {
  const std::size_t n = x.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
  std::vector<double> r(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && x[idx[j]] == x[idx[i]]) ++j;
    const double avg = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k) r[idx[k]] = avg;
    i = j;
  }
  for (double& v : r) v /= static_cast<double>(n + 1);
  return r;
}

struct PseudoSample {
  std::vector<double> u;
  std::vector<double> v;
  std::size_t size() const { return u.size(); }
};

inline PseudoSample pseudo_obs(const std::vector<double>& x,
                               const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2)
    throw InsufficientDataError("pseudo_obs: need paired samples, n >= 2");
  return PseudoSample{normalized_ranks(x), normalized_ranks(y)};
}

}  // namespace dte
