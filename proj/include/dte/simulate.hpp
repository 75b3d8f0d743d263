#pragma once

// Kronecker-normal and TWFE data generators, the closed-form Gaussian
// illustration, the Monte Carlo harness, and brute-force oracles.

#include <array>
#include <cmath>
#include <cstdint>
#include <future>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "dte/bounds.hpp"
#include "dte/estimator.hpp"
#include "dte/gcetest.hpp"
#include "dte/inference.hpp"
#include "dte/panel.hpp"

namespace dte {

using Matrix = std::vector<std::vector<double>>;

namespace detail {

// Cyclic Jacobi; A must be symmetric. Returns eigenvalues; fills *vectors
// with eigenvectors in columns when requested.
inline std::vector<double> sym_eigen(Matrix a, Matrix* vectors = nullptr) {
  const std::size_t n = a.size();
  Matrix v(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) v[i][i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p][q] * a[p][q];
    if (off < 1e-24) break;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) {
        if (std::abs(a[p][q]) < 1e-18) continue;
        const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
        const double t = (theta >= 0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k][p], akq = a[k][q];
          a[k][p] = c * akp - s * akq;
          a[k][q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p][k], aqk = a[q][k];
          a[p][k] = c * apk - s * aqk;
          a[q][k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v[k][p], vkq = v[k][q];
          v[k][p] = c * vkp - s * vkq;
          v[k][q] = s * vkp + c * vkq;
        }
      }
  }
  std::vector<double> eig(n);
  for (std::size_t i = 0; i < n; ++i) eig[i] = a[i][i];
  if (vectors) *vectors = std::move(v);
  return eig;
}

// Symmetric PSD square root via eigen decomposition (negative eigenvalues
// within tolerance are clamped to zero).
inline Matrix sym_sqrt(const Matrix& a, double tol = -1e-10) {
  Matrix v;
  std::vector<double> eig = sym_eigen(a, &v);
  const std::size_t n = a.size();
  for (double e : eig)
    if (e < tol)
      throw ConfigError("covariance matrix is not positive semi-definite "
                        "(eigenvalue " + std::to_string(e) + ")");
  Matrix out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < n; ++k)
        s += v[i][k] * std::sqrt(std::max(eig[k], 0.0)) * v[j][k];
      out[i][j] = s;
    }
  return out;
}

inline void check_correlation_matrix(const Matrix& m, const char* name) {
  const std::size_t n = m.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i].size() != n)
      throw ConfigError(std::string(name) + " must be square");
    if (std::abs(m[i][i] - 1.0) > 1e-12)
      throw ConfigError(std::string(name) + " must have unit diagonal");
    for (std::size_t j = 0; j < n; ++j)
      if (std::abs(m[i][j] - m[j][i]) > 1e-12)
        throw ConfigError(std::string(name) + " must be symmetric");
  }
  sym_sqrt(m);  // PSD check
}

}  // namespace detail

// Latent slot order within a 6-vector: (Y_{1t}, Y_{0t}, Y_{1t-1}, Y_{0t-1},
// Y_{1t-2}, Y_{0t-2}).
inline std::size_t latent_slot(std::size_t lag, int arm) {
  return 2 * lag + static_cast<std::size_t>(1 - arm);
}

// Kronecker-normal design: a unit in group g draws the g-th 6-dimensional
// block of N(mu_eta (x) mu_theta, sigma_eta (x) sigma_theta); with unit
// diagonal sigma_eta every group's block covariance is exactly sigma_theta,
// so all groups share one time copula.
struct DgpSpec {
  std::vector<double> mu_eta = std::vector<double>(8, 0.0);
  std::vector<double> mu_theta = std::vector<double>(6, 0.0);
  Matrix sigma_eta;    // 8x8 correlation
  Matrix sigma_theta;  // 6x6 correlation
  double rho_star = 0.0;
  std::map<Pattern, std::size_t> group_sizes;
  std::uint64_t seed = 0;

  void validate() const {
    if (mu_eta.size() != 8 || mu_theta.size() != 6)
      throw ConfigError("dgp: mu_eta must be length 8, mu_theta length 6");
    if (sigma_eta.size() != 8 || sigma_theta.size() != 6)
      throw ConfigError("dgp: sigma_eta must be 8x8, sigma_theta 6x6");
    detail::check_correlation_matrix(sigma_eta, "sigma_eta");
    detail::check_correlation_matrix(sigma_theta, "sigma_theta");
    if (std::abs(sigma_theta[1][2] - rho_star) > 1e-12)
      throw ConfigError("dgp: rho_star must equal sigma_theta(Y0t, Y1t-1)");
    if (group_sizes.empty()) throw ConfigError("dgp: no group sizes");
    for (const auto& [p, n] : group_sizes) {
      if (p.size() != 3) throw ConfigError("dgp: group patterns have length 3");
      (void)n;
    }
  }
};

// Lag-stationary one-factor design on which both copula-equality assumptions
// hold by construction: theta_{a,p} = lambda*x_p + sqrt(1-lambda^2)*e_{a,p}
// with x_p AR(1), giving corr(theta_{a,p}, theta_{a',p'}) =
// lambda^2 * phi^{|p-p'|} off the diagonal; lambda^2*phi = rho_star.
inline DgpSpec gce_design(double rho_star,
                          const std::map<Pattern, std::size_t>& group_sizes,
                          std::uint64_t seed) {
  if (!(std::abs(rho_star) < 0.95))
    throw ConfigError("gce_design: |rho_star| must be < 0.95");
  const double lambda2 = 0.95;
  const double phi = rho_star / lambda2;
  DgpSpec spec;
  spec.rho_star = rho_star;
  spec.group_sizes = group_sizes;
  spec.seed = seed;
  spec.sigma_eta.assign(8, std::vector<double>(8, 0.0));
  for (int i = 0; i < 8; ++i) spec.sigma_eta[i][i] = 1.0;
  spec.sigma_theta.assign(6, std::vector<double>(6, 0.0));
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t j = 0; j < 6; ++j) {
      if (i == j) {
        spec.sigma_theta[i][j] = 1.0;
        continue;
      }
      const long lag_i = static_cast<long>(i / 2), lag_j = static_cast<long>(j / 2);
      spec.sigma_theta[i][j] =
          lambda2 * std::pow(phi, static_cast<double>(std::labs(lag_i - lag_j)));
    }
  return spec;
}

struct SimulatedPanel {
  PanelDataset data;
  std::vector<long> periods{1, 2, 3};  // t-2, t-1, t
  std::map<Pattern, std::vector<std::array<double, 6>>> latents;
};

inline SimulatedPanel sample_dgp(const DgpSpec& spec) {
  spec.validate();
  const Matrix L = detail::sym_sqrt(spec.sigma_theta);
  SimulatedPanel sim;
  std::vector<PanelRecord> records;
  std::size_t g_index = 0;
  for (const auto& [pattern, n] : spec.group_sizes) {
    std::mt19937_64 rng(mix_seed(spec.seed, 1000 + g_index));
    std::normal_distribution<double> gauss(0.0, 1.0);
    // mu_eta index of the pattern read as a binary number, oldest bit high.
    const std::size_t gbit = static_cast<std::size_t>(
        pattern.bit(0) * 4 + pattern.bit(1) * 2 + pattern.bit(2));
    auto& lat = sim.latents[pattern];
    lat.reserve(n);
    for (std::size_t u = 0; u < n; ++u) {
      std::array<double, 6> z{}, y{};
      for (double& v : z) v = gauss(rng);
      for (std::size_t i = 0; i < 6; ++i) {
        double s = spec.mu_eta[gbit] * spec.mu_theta[i];
        for (std::size_t k = 0; k < 6; ++k) s += L[i][k] * z[k];
        y[i] = s;
      }
      lat.push_back(y);
      const std::string id = "g" + pattern.str() + "_u" + std::to_string(u);
      for (long p = 1; p <= 3; ++p) {
        PanelRecord r;
        r.unit_id = id;
        r.period = p;
        r.treatment = pattern.bit(static_cast<std::size_t>(p - 1));
        r.outcome =
            y[latent_slot(static_cast<std::size_t>(3 - p), r.treatment)];
        records.push_back(std::move(r));
      }
    }
    ++g_index;
  }
  sim.data = PanelDataset(std::move(records));
  return sim;
}

// Gauss-Hermite nodes/weights for integration against the N(0,1) density:
// integral f(v) dPhi(v) ~= sum w_i f(x_i).
struct Quadrature {
  std::vector<double> nodes;
  std::vector<double> weights;
};

inline Quadrature gauss_hermite(int n) {
  if (n < 1) throw ConfigError("gauss_hermite: need n >= 1");
  // Newton iteration on physicists' Hermite polynomials.
  std::vector<double> x(static_cast<std::size_t>(n)),
      w(static_cast<std::size_t>(n));
  const int m = (n + 1) / 2;
  double z = 0.0;
  for (int i = 0; i < m; ++i) {
    if (i == 0)
      z = std::sqrt(2.0 * n + 1.0) - 1.85575 * std::pow(2.0 * n + 1.0, -1.0 / 6.0);
    else if (i == 1)
      z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * x[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * x[1];
    else
      z = 2.0 * z - x[static_cast<std::size_t>(i - 2)];
    double pp = 0.0;
    for (int iter = 0; iter < 100; ++iter) {
      double p1 = std::pow(M_PI, -0.25), p2 = 0.0;
      for (int j = 0; j < n; ++j) {
        const double p3 = p2;
        p2 = p1;
        p1 = z * std::sqrt(2.0 / (j + 1.0)) * p2 -
             std::sqrt(static_cast<double>(j) / (j + 1.0)) * p3;
      }
      pp = std::sqrt(2.0 * n) * p2;
      const double dz = p1 / pp;
      z -= dz;
      if (std::abs(dz) < 1e-15) break;
    }
    x[static_cast<std::size_t>(i)] = z;
    x[static_cast<std::size_t>(n - 1 - i)] = -z;
    w[static_cast<std::size_t>(i)] = 2.0 / (pp * pp);
    w[static_cast<std::size_t>(n - 1 - i)] = w[static_cast<std::size_t>(i)];
  }
  // Map from weight e^{-x^2} to the standard normal measure.
  Quadrature q;
  q.nodes.resize(static_cast<std::size_t>(n));
  q.weights.resize(static_cast<std::size_t>(n));
  for (std::size_t i = 0; i < static_cast<std::size_t>(n); ++i) {
    q.nodes[i] = std::sqrt(2.0) * x[n - 1 - i];  // ascending
    q.weights[i] = w[n - 1 - i] / std::sqrt(M_PI);
  }
  return q;
}

struct IllustrationSpec {
  double rho1 = 0.0;
  double rho0 = 0.0;
  int quad_nodes = 64;
  std::vector<double> delta_grid;  // empty: 201 points on [-6, 6]
  int y_grid_size = 721;
  double y_span = 9.0;

  void validate() const {
    if (!(std::abs(rho1) < 1.0 && std::abs(rho0) < 1.0))
      throw ConfigError("illustration: |rho| must be < 1");
    if (quad_nodes < 2) throw ConfigError("illustration: need >= 2 nodes");
  }
};

struct IllustrationCurves {
  BoundCurve proposed;
  BoundCurve baseline;
};

namespace detail {

// Golden-section maximization on [a, b] for a locally unimodal objective.
inline double golden_max(const std::function<double(double)>& f, double a,
                         double b) {
  const double inv_phi = 0.6180339887498949;
  double x1 = b - inv_phi * (b - a), x2 = a + inv_phi * (b - a);
  double f1 = f(x1), f2 = f(x2);
  for (int i = 0; i < 60 && b - a > 1e-12; ++i) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + inv_phi * (b - a);
      f2 = f(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - inv_phi * (b - a);
      f1 = f(x1);
    }
  }
  return std::max(f1, f2);
}

// Scan the grid for the extreme difference values, then polish each around
// its bracketing neighbors. The continuous extrema are smooth in the
// conditioning value, which keeps Gauss-Hermite spectrally convergent; a raw
// grid sup has argmax-switching kinks that cap quadrature accuracy.
inline std::pair<double, double> refined_extrema(
    const std::function<double(double)>& diff, const std::vector<double>& ys) {
  double dmax = 0.0, dmin = 0.0;
  std::size_t imax = 0, imin = 0;
  for (std::size_t i = 0; i < ys.size(); ++i) {
    const double d = diff(ys[i]);
    if (d > dmax) { dmax = d; imax = i; }
    if (d < dmin) { dmin = d; imin = i; }
  }
  const std::size_t last = ys.size() - 1;
  if (dmax > 0.0)
    dmax = std::max(dmax, golden_max(diff, ys[imax == 0 ? 0 : imax - 1],
                                     ys[imax == last ? last : imax + 1]));
  if (dmin < 0.0)
    dmin = std::min(dmin, -golden_max([&](double y) { return -diff(y); },
                                      ys[imin == 0 ? 0 : imin - 1],
                                      ys[imin == last ? last : imin + 1]));
  return {dmax, dmin};
}

}  // namespace detail

// Gaussian design: Y_{jt} | Y_{1t-1} = v' ~ N(rho_j v', 1 - rho_j^2) with
// standard normal marginals; conditional WD bounds averaged over v' ~ N(0,1)
// by Gauss-Hermite quadrature, against the no-assumption WD baseline on two
// standard normals.
inline IllustrationCurves closed_form_bounds(const IllustrationSpec& spec) {
  spec.validate();
  std::vector<double> deltas = spec.delta_grid;
  if (deltas.empty()) {
    deltas.resize(201);
    for (std::size_t i = 0; i < deltas.size(); ++i)
      deltas[i] = -6.0 + 12.0 * static_cast<double>(i) / 200.0;
  }
  std::vector<double> ys(static_cast<std::size_t>(spec.y_grid_size));
  for (std::size_t i = 0; i < ys.size(); ++i)
    ys[i] = -spec.y_span + 2.0 * spec.y_span * static_cast<double>(i) /
                               static_cast<double>(ys.size() - 1);
  const Quadrature q = gauss_hermite(spec.quad_nodes);
  const double s1 = std::sqrt(1.0 - spec.rho1 * spec.rho1);
  const double s0 = std::sqrt(1.0 - spec.rho0 * spec.rho0);

  IllustrationCurves out;
  out.proposed.delta_grid = deltas;
  out.baseline.delta_grid = deltas;
  out.proposed.lower.assign(deltas.size(), 0.0);
  out.proposed.upper.assign(deltas.size(), 0.0);
  out.baseline.lower.resize(deltas.size());
  out.baseline.upper.resize(deltas.size());

  for (std::size_t k = 0; k < deltas.size(); ++k) {
    const double d = deltas[k];
    double lo_avg = 0.0, up_avg = 0.0;
    for (std::size_t i = 0; i < q.nodes.size(); ++i) {
      const double v = q.nodes[i];
      const auto [dmax, dmin] = detail::refined_extrema(
          [&](double y) {
            return normal_cdf((y - spec.rho1 * v) / s1) -
                   normal_cdf((y - d - spec.rho0 * v) / s0);
          },
          ys);
      lo_avg += q.weights[i] * dmax;
      up_avg += q.weights[i] * (1.0 + dmin);
    }
    out.proposed.lower[k] = lo_avg;
    out.proposed.upper[k] = up_avg;
    const auto [bmax, bmin] = detail::refined_extrema(
        [&](double y) { return normal_cdf(y) - normal_cdf(y - d); }, ys);
    out.baseline.lower[k] = bmax;
    out.baseline.upper[k] = 1.0 + bmin;
  }
  detail::finalize_curve(out.proposed);
  detail::finalize_curve(out.baseline);
  return out;
}

struct McConfig {
  int n_reps = 100;
  Pattern target = Pattern({1, 1, 1});
  EstimatorConfig est;
  bool run_model2 = true;
  bool run_inference = false;
  int inference_model = 1;  // recovery rule the bands are computed for (1 or 2)
  InferenceConfig inf;
  std::vector<double> delta_grid;          // shared across replications
  std::vector<double> coverage_deltas{0.0};
  int threads = 0;  // 0: hardware concurrency
  int quad_nodes = 64;
};

struct McReport {
  double rho_star = 0.0;
  std::size_t n_per_group = 0;
  int n_reps = 0;
  int failed_reps = 0;
  BoundCurve mean_model1;
  BoundCurve mean_model2;
  BoundCurve theory;
  double sup_gap_model1 = 0.0;  // central 80% of the delta grid
  double sup_gap_model2 = 0.0;
  double gap_model1_model2 = 0.0;
  double width_at_zero_model1 = 0.0;
  double width_at_zero_theory = 0.0;
  // Fraction of replications whose confidence bands cover the theoretical
  // endpoint at each coverage delta (model 1).
  std::vector<double> coverage_lower;
  std::vector<double> coverage_upper;
};

namespace detail {

inline double sup_gap_central(const BoundCurve& a, const BoundCurve& b,
                              double central = 0.8) {
  const std::size_t m = a.delta_grid.size();
  const std::size_t lo = static_cast<std::size_t>(
      std::floor(static_cast<double>(m) * (1.0 - central) / 2.0));
  const std::size_t hi = m - lo;
  double g = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    g = std::max(g, std::abs(a.lower[i] - b.lower[i]));
    g = std::max(g, std::abs(a.upper[i] - b.upper[i]));
  }
  return g;
}

inline std::size_t nearest_index(const std::vector<double>& grid, double x) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < grid.size(); ++i)
    if (std::abs(grid[i] - x) < std::abs(grid[best] - x)) best = i;
  return best;
}

}  // namespace detail

inline McReport run_monte_carlo(const DgpSpec& spec, const McConfig& cfg) {
  spec.validate();
  if (cfg.inference_model != 1 && cfg.inference_model != 2)
    throw ConfigError("monte carlo: inference_model must be 1 or 2");
  McReport rep;
  rep.rho_star = spec.rho_star;
  rep.n_reps = cfg.n_reps;
  auto it = spec.group_sizes.find(cfg.target);
  rep.n_per_group = it == spec.group_sizes.end() ? 0 : it->second;

  std::vector<double> deltas = cfg.delta_grid;
  if (deltas.empty()) {
    deltas.resize(101);
    for (std::size_t i = 0; i < deltas.size(); ++i)
      deltas[i] = -6.0 + 12.0 * static_cast<double>(i) / 100.0;
  }

  // Theory from the implied conditional correlations in the design.
  IllustrationSpec ill;
  ill.rho1 = spec.sigma_theta[latent_slot(0, 1)][latent_slot(1, 1)];
  ill.rho0 = spec.sigma_theta[latent_slot(0, 0)][latent_slot(1, 1)];
  ill.delta_grid = deltas;
  ill.quad_nodes = cfg.quad_nodes;
  rep.theory = closed_form_bounds(ill).proposed;

  struct RepResult {
    bool ok = false;
    BoundCurve m1, m2;
    std::vector<char> cov_lower, cov_upper;
  };

  const std::size_t cov_m = cfg.coverage_deltas.size();
  std::vector<double> theory_cov_lower(cov_m), theory_cov_upper(cov_m);
  for (std::size_t j = 0; j < cov_m; ++j) {
    const std::size_t k =
        detail::nearest_index(rep.theory.delta_grid, cfg.coverage_deltas[j]);
    theory_cov_lower[j] = rep.theory.lower[k];
    theory_cov_upper[j] = rep.theory.upper[k];
  }

  auto run_one = [&](int r) {
    RepResult out;
    try {
      DgpSpec s = spec;
      s.seed = mix_seed(spec.seed, static_cast<std::uint64_t>(r));
      SimulatedPanel sim = sample_dgp(s);
      GroupIndex index(sim.data, sim.periods);
      EstimatorConfig est = cfg.est;
      est.delta_grid = deltas;

      const GceSpec spec1 = GceSpec::resolve(GceModel::Model1, cfg.target);
      GroupMatrices g1 = extract_groups(sim.data, index, spec1, {},
                                        est.min_group_size);
      FirstSteps fs1 = fit_first_steps(g1, spec1, est);
      const std::vector<double> ygrid = resolve_y_grid(fs1, est, deltas);
      out.m1 = estimate_dote(fs1, deltas, ygrid);

      GroupMatrices g2;
      std::optional<FirstSteps> fs2;
      const bool need_model2 =
          cfg.run_model2 || (cfg.run_inference && cfg.inference_model == 2);
      if (need_model2) {
        const GceSpec spec2 = GceSpec::resolve(GceModel::Model2, cfg.target);
        g2 = extract_groups(sim.data, index, spec2, {}, est.min_group_size);
        fs2 = fit_first_steps(g2, spec2, est);
        if (cfg.run_model2)
          out.m2 = estimate_dote(*fs2, deltas, resolve_y_grid(*fs2, est, deltas));
      }

      if (cfg.run_inference) {
        InferenceConfig inf = cfg.inf;
        inf.seed = mix_seed(cfg.inf.seed, static_cast<std::uint64_t>(r));
        const bool use2 = cfg.inference_model == 2;
        const GroupMatrices& gi = use2 ? g2 : g1;
        const FirstSteps& fi = use2 ? *fs2 : fs1;
        const std::vector<double> yg =
            use2 ? resolve_y_grid(fi, est, deltas) : ygrid;
        std::vector<FirstSteps> boots =
            bootstrap_first_steps(gi, fi, est, inf);
        std::size_t n_total = gi.target.size() + gi.control.size();
        if (fi.spec.recovery != CicSpec::resolve(fi.spec.target).control)
          n_total += gi.recovery.size();
        BandEstimate be = numerical_delta(
            fi, boots,
            [&](const FirstSteps& f) {
              return estimate_dote(f, cfg.coverage_deltas, yg);
            },
            n_total, inf);
        out.cov_lower.resize(cov_m);
        out.cov_upper.resize(cov_m);
        for (std::size_t j = 0; j < cov_m; ++j) {
          out.cov_lower[j] = be.band_lower[j] <= theory_cov_lower[j] ? 1 : 0;
          out.cov_upper[j] = be.band_upper[j] >= theory_cov_upper[j] ? 1 : 0;
        }
      }
      out.ok = true;
    } catch (const std::exception&) {
      out.ok = false;
    }
    return out;
  };

  const int threads = cfg.threads > 0
                          ? cfg.threads
                          : static_cast<int>(std::max(
                                1u, std::thread::hardware_concurrency()));
  std::vector<RepResult> results(static_cast<std::size_t>(cfg.n_reps));
  for (int start = 0; start < cfg.n_reps; start += threads) {
    std::vector<std::future<RepResult>> batch;
    const int end = std::min(start + threads, cfg.n_reps);
    for (int r = start; r < end; ++r)
      batch.push_back(std::async(std::launch::async, run_one, r));
    for (int r = start; r < end; ++r)
      results[static_cast<std::size_t>(r)] = batch[static_cast<std::size_t>(r - start)].get();
  }

  rep.mean_model1.delta_grid = deltas;
  rep.mean_model1.lower.assign(deltas.size(), 0.0);
  rep.mean_model1.upper.assign(deltas.size(), 0.0);
  rep.mean_model2 = rep.mean_model1;
  std::vector<double> covl(cov_m, 0.0), covu(cov_m, 0.0);
  int ok_count = 0, cov_count = 0;
  for (const auto& r : results) {
    if (!r.ok) {
      ++rep.failed_reps;
      continue;
    }
    ++ok_count;
    for (std::size_t i = 0; i < deltas.size(); ++i) {
      rep.mean_model1.lower[i] += r.m1.lower[i];
      rep.mean_model1.upper[i] += r.m1.upper[i];
      if (cfg.run_model2) {
        rep.mean_model2.lower[i] += r.m2.lower[i];
        rep.mean_model2.upper[i] += r.m2.upper[i];
      }
    }
    if (!r.cov_lower.empty()) {
      ++cov_count;
      for (std::size_t j = 0; j < cov_m; ++j) {
        covl[j] += r.cov_lower[j];
        covu[j] += r.cov_upper[j];
      }
    }
  }
  if (ok_count == 0)
    throw InsufficientDataError("monte carlo: all replications failed");
  const double w = 1.0 / static_cast<double>(ok_count);
  for (std::size_t i = 0; i < deltas.size(); ++i) {
    rep.mean_model1.lower[i] *= w;
    rep.mean_model1.upper[i] *= w;
    rep.mean_model2.lower[i] *= w;
    rep.mean_model2.upper[i] *= w;
  }
  rep.sup_gap_model1 = detail::sup_gap_central(rep.mean_model1, rep.theory);
  if (cfg.run_model2) {
    rep.sup_gap_model2 = detail::sup_gap_central(rep.mean_model2, rep.theory);
    rep.gap_model1_model2 =
        detail::sup_gap_central(rep.mean_model1, rep.mean_model2);
  }
  const std::size_t k0 = detail::nearest_index(deltas, 0.0);
  rep.width_at_zero_model1 =
      rep.mean_model1.upper[k0] - rep.mean_model1.lower[k0];
  rep.width_at_zero_theory = rep.theory.upper[k0] - rep.theory.lower[k0];
  if (cov_count > 0) {
    rep.coverage_lower.resize(cov_m);
    rep.coverage_upper.resize(cov_m);
    for (std::size_t j = 0; j < cov_m; ++j) {
      rep.coverage_lower[j] = covl[j] / static_cast<double>(cov_count);
      rep.coverage_upper[j] = covu[j] / static_cast<double>(cov_count);
    }
  }
  return rep;
}

// Two-way fixed effects: Y_{1s} = theta_s + eta + alpha + V_s,
// Y_{0s} = theta_s + eta + V_s, with AR(1) shocks. violation_scale != 1
// inflates the comparison group's earliest shock, breaking lag-stationarity.
struct TwfeSpec {
  std::vector<double> theta{0.0, 0.0, 0.0};  // t-2, t-1, t
  double alpha_te = 1.0;
  double eta_sd = 1.0;
  double v_sd = 1.0;
  double v_ar = 0.0;
  double violation_scale = 1.0;
  std::uint64_t seed = 0;
};

struct TwfeCheckReport {
  double tau_a = 0.0;
  double tau_b = 0.0;
  double p_parametric = 1.0;
  double statistic_cvm = 0.0;
  double p_nonparametric = 1.0;
  std::size_t n = 0;
};

// Simulates the TWFE model and tests the sufficiency condition: the copula
// of (eta + V_t, eta + alpha + V_{t-1}) in the target group against the
// copula of (eta + V_{t-1}, eta + alpha + V_{t-2}) in the comparison group.
inline TwfeCheckReport twfe_dgp_check(const TwfeSpec& spec, std::size_t n,
                                      const GceTestConfig& cfg = {}) {
  if (spec.theta.size() != 3)
    throw ConfigError("twfe: need theta for 3 periods");
  auto draw_group = [&](std::uint64_t salt, bool comparison,
                        BivariateSample& out) {
    std::mt19937_64 rng(mix_seed(spec.seed, salt));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double innov_sd = spec.v_sd * std::sqrt(1.0 - spec.v_ar * spec.v_ar);
    for (std::size_t i = 0; i < n; ++i) {
      const double eta = spec.eta_sd * gauss(rng);
      double v[3];
      v[0] = spec.v_sd * gauss(rng);
      if (comparison) v[0] *= spec.violation_scale;
      for (int s = 1; s < 3; ++s) v[s] = spec.v_ar * v[s - 1] + innov_sd * gauss(rng);
      if (comparison) {
        // (eta + V_{t-1}, eta + alpha + V_{t-2})
        out.x.push_back(eta + v[1]);
        out.y.push_back(eta + spec.alpha_te + v[0]);
      } else {
        // (eta + V_t, eta + alpha + V_{t-1})
        out.x.push_back(eta + v[2]);
        out.y.push_back(eta + spec.alpha_te + v[1]);
      }
    }
  };
  TestSamples ts;
  draw_group(1, false, ts.a);
  draw_group(2, true, ts.b);
  TwfeCheckReport rep;
  rep.n = n;
  KendallTestResult kt = kendall_test(ts.a, ts.b, cfg.n_bootstrap,
                                      mix_seed(cfg.seed, 1), cfg.use_normal_approx);
  CopulaTestConfig cc = cfg.copula;
  cc.seed = mix_seed(cfg.seed, 2);
  CopulaTestResult ct = copula_equality_test(ts.a, ts.b, cc);
  rep.tau_a = kt.tau_a;
  rep.tau_b = kt.tau_b;
  rep.p_parametric = kt.p_value;
  rep.statistic_cvm = ct.statistic;
  rep.p_nonparametric = ct.p_value;
  return rep;
}

// Discrete marginal for the coupling oracle.
struct DiscreteDist {
  std::vector<double> values;
  std::vector<double> probs;

  void validate() const {
    if (values.size() != probs.size() || values.empty())
      throw ConfigError("discrete distribution: size mismatch");
    double s = 0.0;
    for (double p : probs) {
      if (p < -1e-15) throw ConfigError("discrete distribution: negative mass");
      s += p;
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw ConfigError("discrete distribution: probabilities must sum to 1");
  }

  StepDistribution step() const {
    std::vector<std::size_t> order(values.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
    std::vector<double> sup, cdf;
    double acc = 0.0;
    for (std::size_t k : order) {
      acc += probs[k];
      if (!sup.empty() && values[k] == sup.back())
        cdf.back() = std::min(acc, 1.0);
      else {
        sup.push_back(values[k]);
        cdf.push_back(std::min(acc, 1.0));
      }
    }
    cdf.back() = 1.0;
    return StepDistribution(std::move(sup), std::move(cdf));
  }
};

namespace detail {

// Edmonds-Karp on a dense capacity matrix (tiny networks).
inline double max_flow(std::vector<std::vector<double>>& cap, std::size_t s,
                       std::size_t t) {
  const std::size_t n = cap.size();
  double flow = 0.0;
  for (;;) {
    std::vector<long> parent(n, -1);
    parent[s] = static_cast<long>(s);
    std::vector<std::size_t> queue{s};
    for (std::size_t qi = 0; qi < queue.size() && parent[t] < 0; ++qi) {
      const std::size_t u = queue[qi];
      for (std::size_t v = 0; v < n; ++v)
        if (parent[v] < 0 && cap[u][v] > 1e-14) {
          parent[v] = static_cast<long>(u);
          queue.push_back(v);
        }
    }
    if (parent[t] < 0) break;
    double aug = std::numeric_limits<double>::infinity();
    for (std::size_t v = t; v != s; v = static_cast<std::size_t>(parent[v]))
      aug = std::min(aug, cap[static_cast<std::size_t>(parent[v])][v]);
    for (std::size_t v = t; v != s; v = static_cast<std::size_t>(parent[v])) {
      const std::size_t u = static_cast<std::size_t>(parent[v]);
      cap[u][v] -= aug;
      cap[v][u] += aug;
    }
    flow += aug;
  }
  return flow;
}

// Maximum mass a coupling of (p, q) can place on the allowed (i, j) pairs.
inline double max_mass_on(const DiscreteDist& f1, const DiscreteDist& f0,
                          const std::function<bool(double, double)>& allowed) {
  const std::size_t n1 = f1.values.size(), n0 = f0.values.size();
  const std::size_t N = n1 + n0 + 2, s = 0, t = N - 1;
  std::vector<std::vector<double>> cap(N, std::vector<double>(N, 0.0));
  for (std::size_t i = 0; i < n1; ++i) cap[s][1 + i] = f1.probs[i];
  for (std::size_t j = 0; j < n0; ++j) cap[1 + n1 + j][t] = f0.probs[j];
  for (std::size_t i = 0; i < n1; ++i)
    for (std::size_t j = 0; j < n0; ++j)
      if (allowed(f1.values[i], f0.values[j])) cap[1 + i][1 + n1 + j] = 2.0;
  return max_flow(cap, s, t);
}

}  // namespace detail

struct CouplingBounds {
  double min_prob = 0.0;
  double max_prob = 1.0;
};

// Exact min/max of P(Y1 - Y0 <= delta) over all couplings with the given
// marginals: the max is the largest mass routable through pairs with
// a - b <= delta; the min is 1 minus the mass routable through the
// complement.
inline CouplingBounds lp_coupling_oracle(const DiscreteDist& f1,
                                         const DiscreteDist& f0, double delta) {
  f1.validate();
  f0.validate();
  CouplingBounds out;
  out.max_prob = detail::max_mass_on(
      f1, f0, [&](double a, double b) { return a - b <= delta; });
  out.min_prob = 1.0 - detail::max_mass_on(
                           f1, f0,
                           [&](double a, double b) { return a - b > delta; });
  return out;
}

}  // namespace dte
