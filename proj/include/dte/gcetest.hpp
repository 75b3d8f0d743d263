#pragma once

// Tests of the two copula-equality assumptions on six-period windows: the
// parametric Kendall-tau comparison and the nonparametric Cramér-von Mises
// copula-equality test with multiplier bootstrap.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "dte/counterfactual.hpp"
#include "dte/distributions.hpp"
#include "dte/inference.hpp"
#include "dte/panel.hpp"

namespace dte {

struct WindowSpec {
  std::vector<long> periods;  // six, ascending: t-5 ... t
  GceModel assumption = GceModel::Model1;  // Model1 = GCE-I, Model2 = GCE-II
  Pattern target;                          // length 3

  void validate() const {
    if (periods.size() != 6)
      throw ConfigError("window spec: need exactly 6 periods");
    for (std::size_t i = 1; i < periods.size(); ++i)
      if (periods[i] <= periods[i - 1])
        throw ConfigError("window spec: periods must be ascending");
    if (target.size() != 3)
      throw ConfigError("window spec: target pattern must have length 3");
  }
};

struct BivariateSample {
  std::vector<double> x;
  std::vector<double> y;
  std::size_t size() const { return x.size(); }
};

struct TestSamples {
  BivariateSample a;
  BivariateSample b;
  std::string cell_a;  // six-period pattern the sample was drawn from
  std::string cell_b;
};

// Sample A holds the would-be-unobserved pair realized one window earlier:
// units with initial pattern = target-with-last-flipped and final pattern =
// target, paired outcomes at (t-4, t-3). Sample B holds the recovery-group
// copula: GCE-I uses the recovery pattern in both halves with the pair at
// (t-5, t-4); GCE-II uses the flipped pattern in both halves with the pair
// at (t-4, t-3).
inline TestSamples build_test_samples(const PanelDataset& data,
                                      const WindowSpec& w,
                                      std::size_t min_cell = 10) {
  w.validate();
  const GceSpec spec = GceSpec::resolve(w.assumption, w.target);
  const Pattern flipped = CicSpec::resolve(w.target).control;

  auto concat = [](const Pattern& p, const Pattern& q) {
    std::vector<int> bits = p.bits();
    bits.insert(bits.end(), q.bits().begin(), q.bits().end());
    return Pattern(std::move(bits));
  };
  const Pattern cell_a = concat(flipped, w.target);
  const Pattern cell_b = w.assumption == GceModel::Model1
                             ? concat(spec.recovery, spec.recovery)
                             : concat(flipped, flipped);
  const std::size_t bx = 1, by = 2;                               // sample A
  const std::size_t cx = w.assumption == GceModel::Model1 ? 0 : 1;  // sample B
  const std::size_t cy = cx + 1;

  GroupIndex idx(data, w.periods);
  auto extract = [&](const Pattern& cell, std::size_t i, std::size_t j) {
    BivariateSample s;
    if (const auto* units = idx.units(cell)) {
      for (const auto& u : *units) {
        s.x.push_back(data.find(u, w.periods[i])->outcome);
        s.y.push_back(data.find(u, w.periods[j])->outcome);
      }
    }
    return s;
  };
  TestSamples out;
  out.a = extract(cell_a, bx, by);
  out.b = extract(cell_b, cx, cy);
  out.cell_a = cell_a.str();
  out.cell_b = cell_b.str();
  if (out.a.size() < min_cell)
    throw InsufficientDataError("test cell " + out.cell_a + " has " +
                                std::to_string(out.a.size()) + " units");
  if (out.b.size() < min_cell)
    throw InsufficientDataError("test cell " + out.cell_b + " has " +
                                std::to_string(out.b.size()) + " units");
  return out;
}

struct KendallTestResult {
  double tau_a = 0.0;
  double tau_b = 0.0;
  double p_value = 1.0;
};

// T = tau_A - tau_B; null distribution by independent within-sample bootstrap
// of the recentered statistic. With use_normal_approx, a normal tail on the
// bootstrap standard error is used instead of the empirical tail.
inline KendallTestResult kendall_test(const BivariateSample& a,
                                      const BivariateSample& b,
                                      int n_bootstrap, std::uint64_t seed,
                                      bool use_normal_approx = false) {
  if (a.size() < 10 || b.size() < 10)
    throw InsufficientDataError("kendall_test: need n >= 10 per sample");
  KendallTestResult res;
  res.tau_a = kendall_tau(a.x, a.y);
  res.tau_b = kendall_tau(b.x, b.y);
  const double t = res.tau_a - res.tau_b;

  auto boot_tau = [](const BivariateSample& s, std::mt19937_64& rng) {
    std::uniform_int_distribution<std::size_t> pick(0, s.size() - 1);
    std::vector<double> x(s.size()), y(s.size());
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t k = pick(rng);
      x[i] = s.x[k];
      y[i] = s.y[k];
    }
    return kendall_tau(x, y);
  };

  std::vector<double> centered;
  centered.reserve(static_cast<std::size_t>(n_bootstrap));
  for (int r = 0; r < n_bootstrap; ++r) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(r)));
    try {
      centered.push_back(boot_tau(a, rng) - boot_tau(b, rng) - t);
    } catch (const DataError&) {
      // all-tied resample; skip
    }
  }
  if (centered.empty()) throw DataError("kendall_test: degenerate samples");

  if (use_normal_approx) {
    double m = 0.0, s2 = 0.0;
    for (double v : centered) m += v;
    m /= static_cast<double>(centered.size());
    for (double v : centered) s2 += (v - m) * (v - m);
    s2 /= static_cast<double>(centered.size() - 1);
    const double z = std::abs(t) / std::max(std::sqrt(s2), 1e-300);
    res.p_value = 2.0 * (1.0 - normal_cdf(z));
  } else {
    std::size_t ge = 0;
    for (double v : centered)
      if (std::abs(v) >= std::abs(t)) ++ge;
    res.p_value = static_cast<double>(ge + 1) /
                  static_cast<double>(centered.size() + 1);
  }
  return res;
}

struct CopulaTestConfig {
  int n_multiplier = 1000;
  std::uint64_t seed = 0;
  bool permutation = false;       // pooled-resplit fallback
  std::size_t max_eval_points = 400;
};

struct CopulaTestResult {
  double statistic = 0.0;  // Cramér-von Mises
  double p_value = 1.0;
};

namespace detail {

struct CopulaSample {
  std::vector<double> u, v;  // pseudo-observations
  double eval(double uu, double vv) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < u.size(); ++i)
      if (u[i] <= uu + 1e-12 && v[i] <= vv + 1e-12) ++c;
    return static_cast<double>(c) / static_cast<double>(u.size());
  }
};

inline CopulaSample make_copula_sample(const BivariateSample& s) {
  PseudoSample p = pseudo_obs(s.x, s.y);
  return CopulaSample{std::move(p.u), std::move(p.v)};
}

// Centered multiplier terms k_i(p) for the empirical copula process with
// finite-difference partial derivatives (bandwidth 1/sqrt(n)).
inline std::vector<std::vector<double>> multiplier_terms(
    const CopulaSample& s, const std::vector<std::pair<double, double>>& pts) {
  const std::size_t n = s.u.size();
  const double h = 1.0 / std::sqrt(static_cast<double>(n));
  std::vector<std::vector<double>> k(pts.size(), std::vector<double>(n));
  for (std::size_t p = 0; p < pts.size(); ++p) {
    const auto [uu, vv] = pts[p];
    const double c = s.eval(uu, vv);
    const double ul = std::max(uu - h, 0.0), uh = std::min(uu + h, 1.0);
    const double vl = std::max(vv - h, 0.0), vh = std::min(vv + h, 1.0);
    const double d1 = (s.eval(uh, vv) - s.eval(ul, vv)) / (uh - ul);
    const double d2 = (s.eval(uu, vh) - s.eval(uu, vl)) / (vh - vl);
    for (std::size_t i = 0; i < n; ++i) {
      const double ind =
          (s.u[i] <= uu + 1e-12 && s.v[i] <= vv + 1e-12) ? 1.0 : 0.0;
      const double iu = s.u[i] <= uu + 1e-12 ? 1.0 : 0.0;
      const double iv = s.v[i] <= vv + 1e-12 ? 1.0 : 0.0;
      k[p][i] = ind - c - d1 * (iu - uu) - d2 * (iv - vv);
    }
  }
  return k;
}

inline double cvm_statistic(const CopulaSample& a, const CopulaSample& b,
                            const std::vector<std::pair<double, double>>& pts) {
  const double na = static_cast<double>(a.u.size());
  const double nb = static_cast<double>(b.u.size());
  double s = 0.0;
  for (const auto& [uu, vv] : pts) {
    const double d = a.eval(uu, vv) - b.eval(uu, vv);
    s += d * d;
  }
  return (na * nb / (na + nb)) * s / static_cast<double>(pts.size());
}

}  // namespace detail

// Cramér-von Mises statistic of the empirical-copula difference at the pooled
// pseudo-observation points (deterministically thinned above
// max_eval_points); p-value by multiplier bootstrap with standard-normal
// multipliers, or by a pooled permutation test when configured.
inline CopulaTestResult copula_equality_test(const BivariateSample& a,
                                             const BivariateSample& b,
                                             const CopulaTestConfig& cfg = {}) {
  if (a.size() < 20 || b.size() < 20)
    throw InsufficientDataError("copula_equality_test: need n >= 20 per sample");
  detail::CopulaSample ca = detail::make_copula_sample(a);
  detail::CopulaSample cb = detail::make_copula_sample(b);

  std::vector<std::pair<double, double>> pts;
  pts.reserve(a.size() + b.size());
  for (std::size_t i = 0; i < ca.u.size(); ++i) pts.emplace_back(ca.u[i], ca.v[i]);
  for (std::size_t i = 0; i < cb.u.size(); ++i) pts.emplace_back(cb.u[i], cb.v[i]);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() > cfg.max_eval_points) {
    std::vector<std::pair<double, double>> thin;
    thin.reserve(cfg.max_eval_points);
    for (std::size_t i = 0; i < cfg.max_eval_points; ++i)
      thin.push_back(pts[(i * (pts.size() - 1)) / (cfg.max_eval_points - 1)]);
    thin.erase(std::unique(thin.begin(), thin.end()), thin.end());
    pts = std::move(thin);
  }

  CopulaTestResult res;
  res.statistic = detail::cvm_statistic(ca, cb, pts);

  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::vector<double> repl;
  repl.reserve(static_cast<std::size_t>(cfg.n_multiplier));

  if (cfg.permutation) {
    std::vector<std::pair<double, double>> pool;
    for (std::size_t i = 0; i < a.size(); ++i) pool.emplace_back(a.x[i], a.y[i]);
    for (std::size_t i = 0; i < b.size(); ++i) pool.emplace_back(b.x[i], b.y[i]);
    for (int r = 0; r < cfg.n_multiplier; ++r) {
      std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      std::shuffle(pool.begin(), pool.end(), rng);
      BivariateSample pa, pb;
      for (std::size_t i = 0; i < pool.size(); ++i) {
        auto& s = i < a.size() ? pa : pb;
        s.x.push_back(pool[i].first);
        s.y.push_back(pool[i].second);
      }
      repl.push_back(detail::cvm_statistic(detail::make_copula_sample(pa),
                                           detail::make_copula_sample(pb), pts));
    }
  } else {
    const auto ka = detail::multiplier_terms(ca, pts);
    const auto kb = detail::multiplier_terms(cb, pts);
    const double scale = na * nb / (na + nb);
    std::vector<double> xa(a.size()), xb(b.size());
    for (int r = 0; r < cfg.n_multiplier; ++r) {
      std::mt19937_64 rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(r)));
      std::normal_distribution<double> gauss(0.0, 1.0);
      for (double& x : xa) x = gauss(rng);
      for (double& x : xb) x = gauss(rng);
      double s = 0.0;
      for (std::size_t p = 0; p < pts.size(); ++p) {
        double sa = 0.0, sb = 0.0;
        for (std::size_t i = 0; i < xa.size(); ++i) sa += xa[i] * ka[p][i];
        for (std::size_t i = 0; i < xb.size(); ++i) sb += xb[i] * kb[p][i];
        const double d = sa / na - sb / nb;  // (alpha_A/sqrt(nA) - ...)
        s += d * d;
      }
      repl.push_back(scale * s / static_cast<double>(pts.size()));
    }
  }

  std::size_t ge = 0;
  for (double v : repl)
    if (v >= res.statistic) ++ge;
  res.p_value =
      static_cast<double>(ge + 1) / static_cast<double>(repl.size() + 1);
  return res;
}

struct GceTestConfig {
  int n_bootstrap = 1000;       // parametric test
  CopulaTestConfig copula;
  std::uint64_t seed = 0;
  bool use_normal_approx = false;
  std::size_t min_cell = 20;
};

struct GceTestResult {
  std::string window_label;
  double tau_a = 0.0;
  double tau_b = 0.0;
  double p_parametric = 1.0;
  double statistic_cvm = 0.0;
  double p_nonparametric = 1.0;
  std::size_t n_a = 0;
  std::size_t n_b = 0;
  bool insufficient = false;
  std::string note;
};

// One row per rolling six-period window; rows are labeled by the window's
// last three periods. Insufficient cells flag the row instead of failing the
// sweep.
inline std::vector<GceTestResult> window_sweep(const PanelDataset& data,
                                               GceModel assumption,
                                               const Pattern& target,
                                               const GceTestConfig& cfg = {}) {
  const auto& periods = data.periods();
  if (periods.size() < 6)
    throw DataError("window sweep: need at least 6 periods");
  std::vector<GceTestResult> rows;
  for (std::size_t s = 0; s + 6 <= periods.size(); ++s) {
    WindowSpec w;
    w.periods.assign(periods.begin() + static_cast<long>(s),
                     periods.begin() + static_cast<long>(s + 6));
    w.assumption = assumption;
    w.target = target;
    GceTestResult row;
    row.window_label = std::to_string(w.periods[3]) + "-" +
                       std::to_string(w.periods[4]) + "-" +
                       std::to_string(w.periods[5]);
    try {
      TestSamples ts = build_test_samples(data, w, cfg.min_cell);
      row.n_a = ts.a.size();
      row.n_b = ts.b.size();
      CopulaTestConfig cc = cfg.copula;
      cc.seed = mix_seed(cfg.seed, 2 * s);
      KendallTestResult kt =
          kendall_test(ts.a, ts.b, cfg.n_bootstrap, mix_seed(cfg.seed, 2 * s + 1),
                       cfg.use_normal_approx);
      CopulaTestResult ct = copula_equality_test(ts.a, ts.b, cc);
      row.tau_a = kt.tau_a;
      row.tau_b = kt.tau_b;
      row.p_parametric = kt.p_value;
      row.statistic_cvm = ct.statistic;
      row.p_nonparametric = ct.p_value;
    } catch (const InsufficientDataError& e) {
      row.insufficient = true;
      row.note = e.what();
    } catch (const DataError& e) {
      row.insufficient = true;
      row.note = e.what();
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace dte
