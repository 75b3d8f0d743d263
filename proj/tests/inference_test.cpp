#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numeric>
#include <random>

#include "dte/inference.hpp"
#include "oracles.hpp"

using namespace dte;

namespace {

double step_mean(const StepDistribution& d) {
  double m = 0.0, prev = 0.0;
  for (std::size_t i = 0; i < d.support().size(); ++i) {
    m += d.support()[i] * (d.cdf_values()[i] - prev);
    prev = d.cdf_values()[i];
  }
  return m;
}

// Three-period outcome matrix with AR-style dependence across periods.
std::vector<std::vector<double>> make_group(std::size_t n, double shift,
                                            std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss;
  std::vector<std::vector<double>> m(n, std::vector<double>(3));
  for (auto& row : m) {
    row[0] = gauss(rng) + shift;
    row[1] = 0.6 * row[0] + 0.8 * gauss(rng);
    row[2] = 0.6 * row[1] + 0.8 * gauss(rng) + shift;
  }
  return m;
}

GroupMatrices make_groups(std::size_t n, std::uint64_t seed) {
  GroupMatrices g;
  g.target = make_group(n, 0.5, seed);
  g.control = make_group(n, 0.0, seed + 1);
  g.recovery = g.control;  // Model 2: recovery is the control group
  return g;
}

const GceSpec kSpec = GceSpec::resolve(GceModel::Model2, Pattern::parse("111"));

}  // namespace

TEST_CASE("bootstrap refits are deterministic in the seed") {
  GroupMatrices g = make_groups(80, 11);
  EstimatorConfig est;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 100;
  cfg.seed = 42;
  std::vector<FirstSteps> a = bootstrap_first_steps(g, fit, est, cfg);
  std::vector<FirstSteps> b = bootstrap_first_steps(g, fit, est, cfg);
  REQUIRE(a.size() == 100);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].F_target_last.support() == b[i].F_target_last.support());
    CHECK(a[i].F_target_last.cdf_values() == b[i].F_target_last.cdf_values());
    CHECK(a[i].F0_target_last.cdf_values() == b[i].F0_target_last.cdf_values());
  }
  cfg.seed = 43;
  std::vector<FirstSteps> c = bootstrap_first_steps(g, fit, est, cfg);
  CHECK(c[0].F_target_last.support() != a[0].F_target_last.support());
}

TEST_CASE("a group with identical rows resamples to itself") {
  GroupMatrices g = make_groups(60, 21);
  g.control.assign(60, {1.0, 2.0, 3.0});
  g.recovery = g.control;
  EstimatorConfig est;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 100;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);
  for (const FirstSteps& b : boots) {
    CHECK(b.F_control_last.support() == fit.F_control_last.support());
    CHECK(b.F_control_last.cdf_values() == fit.F_control_last.cdf_values());
  }
}

TEST_CASE("bootstrap spread of the mean tracks s over root n") {
  const std::size_t n = 500;
  GroupMatrices g = make_groups(n, 33);
  EstimatorConfig est;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 500;
  cfg.seed = 9;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);

  std::vector<double> means;
  for (const FirstSteps& b : boots) means.push_back(step_mean(b.F_target_last));
  const double mbar =
      std::accumulate(means.begin(), means.end(), 0.0) / means.size();
  double var = 0.0;
  for (double m : means) var += (m - mbar) * (m - mbar);
  var /= static_cast<double>(means.size() - 1);

  std::vector<double> x = column(g.target, 2);
  const double xbar = std::accumulate(x.begin(), x.end(), 0.0) / x.size();
  double s2 = 0.0;
  for (double v : x) s2 += (v - xbar) * (v - xbar);
  s2 /= static_cast<double>(n - 1);
  const double want = std::sqrt(s2 / static_cast<double>(n));
  CHECK(std::sqrt(var) == Catch::Approx(want).epsilon(0.2));
}

TEST_CASE("zero-variance bootstrap collapses the band onto the point") {
  GroupMatrices g = make_groups(60, 44);
  EstimatorConfig est;
  est.delta_grid = {-1.0, 0.0, 1.0};
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  std::vector<FirstSteps> boots(150, fit);
  InferenceConfig cfg;
  cfg.n_bootstrap = 150;
  auto pipeline = [&](const FirstSteps& fs) {
    return estimate_dote(fs, est);
  };
  BandEstimate be = numerical_delta(fit, boots, pipeline, 60, cfg);
  CHECK(be.skipped == 0);
  for (std::size_t k = 0; k < be.point.delta_grid.size(); ++k) {
    CHECK(be.c_lower[k] == 0.0);
    CHECK(be.c_upper[k] == 0.0);
    CHECK(be.band_lower[k] == be.point.lower[k]);
    CHECK(be.band_upper[k] == be.point.upper[k]);
  }
}

TEST_CASE("linear functional: ratios drop epsilon and bands are r-invariant") {
  const std::size_t n = 500;
  GroupMatrices g = make_groups(n, 55);
  EstimatorConfig est;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 400;
  cfg.seed = 3;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);

  const double y0 = fit.F_target_last.quantile(0.5);
  auto pipeline = [&](const FirstSteps& fs) {
    BoundCurve c;
    c.delta_grid = {0.0};
    c.lower = {fs.F_target_last.cdf(y0)};
    c.upper = c.lower;
    return c;
  };

  // direct quantile of the exact linearized ratio -sqrt(n) (F_B - F)(y0)
  std::vector<double> lin;
  for (const FirstSteps& b : boots)
    lin.push_back(-std::sqrt(static_cast<double>(n)) *
                  (b.F_target_last.cdf(y0) - fit.F_target_last.cdf(y0)));
  std::sort(lin.begin(), lin.end());
  const double c95 = std::max(
      lin[static_cast<std::size_t>(std::ceil(0.95 * lin.size())) - 1], 0.0);

  std::vector<double> cs;
  for (double r : {1.0 / 6.0, 1.0 / 4.0, 1.0 / 3.0}) {
    cfg.r = r;
    BandEstimate be = numerical_delta(fit, boots, pipeline, n, cfg);
    CHECK(be.c_lower[0] == Catch::Approx(c95).margin(0.15));
    cs.push_back(be.c_lower[0]);
  }
  for (double c : cs) CHECK(c == Catch::Approx(cs[0]).margin(0.1));
}

TEST_CASE("max-selector functional matches the directional-derivative oracle") {
  // outcomes on three atoms; phi(F) = max(F(a), 1 - F(b)) has a kink where
  // the two branches tie, the canonical non-differentiable case
  const std::size_t n = 400;
  std::mt19937_64 rng(77);
  std::uniform_real_distribution<double> unif;
  GroupMatrices g = make_groups(n, 66);
  for (auto& row : g.target) {
    const double u = unif(rng);
    row[2] = u < 0.25 ? 0.0 : (u < 0.75 ? 1.0 : 2.0);
  }
  EstimatorConfig est;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 400;
  cfg.seed = 5;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);

  const double a = 0.5, b = 1.5;
  auto phi = [&](const StepDistribution& F) {
    return std::max(F.cdf(a), 1.0 - F.cdf(b));
  };
  auto pipeline = [&](const FirstSteps& fs) {
    BoundCurve c;
    c.delta_grid = {0.0};
    c.lower = {phi(fs.F_target_last)};
    c.upper = c.lower;
    return c;
  };
  BandEstimate be = numerical_delta(fit, boots, pipeline, n, cfg);

  // oracle: evaluate the finite-epsilon directional difference quotient in
  // closed form from the ECDF values, bypassing the perturbation objects
  const double eps = std::pow(static_cast<double>(n), -cfg.r);
  const double root_n = std::sqrt(static_cast<double>(n));
  const double u = fit.F_target_last.cdf(a), v = 1.0 - fit.F_target_last.cdf(b);
  std::vector<double> ratios;
  for (const FirstSteps& bt : boots) {
    const double ha =
        -root_n * (bt.F_target_last.cdf(a) - fit.F_target_last.cdf(a));
    const double hb =
        root_n * (bt.F_target_last.cdf(b) - fit.F_target_last.cdf(b));
    ratios.push_back(
        (std::max(u + eps * ha, v + eps * hb) - std::max(u, v)) / eps);
  }
  std::sort(ratios.begin(), ratios.end());
  const double want = std::max(
      ratios[static_cast<std::size_t>(std::ceil(0.95 * ratios.size())) - 1],
      0.0);
  CHECK(be.c_lower[0] == Catch::Approx(want).margin(0.1));
}

TEST_CASE("bands bracket the point estimate on a full pipeline") {
  GroupMatrices g = make_groups(150, 88);
  EstimatorConfig est;
  est.delta_grid_size = 41;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 120;
  cfg.seed = 17;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);
  const std::vector<double> deltas = resolve_delta_grid(fit, est);
  const std::vector<double> ys = resolve_y_grid(fit, est, deltas);
  auto pipeline = [&](const FirstSteps& fs) {
    return estimate_dote(fs, deltas, ys);
  };
  BandEstimate be = numerical_delta(fit, boots, pipeline, 300, cfg);
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    CHECK(be.band_lower[k] <= be.point.lower[k]);
    CHECK(be.point.lower[k] <= be.point.upper[k]);
    CHECK(be.point.upper[k] <= be.band_upper[k]);
  }
  CHECK(be.epsilon == Catch::Approx(std::pow(300.0, -0.25)));

  // determinism of the whole band construction
  BandEstimate be2 = numerical_delta(fit, boots, pipeline, 300, cfg);
  CHECK(be.band_lower == be2.band_lower);
  CHECK(be.band_upper == be2.band_upper);
}

TEST_CASE("two-sided bands are nested outside one-sided bands") {
  GroupMatrices g = make_groups(150, 88);
  EstimatorConfig est;
  est.delta_grid_size = 21;
  FirstSteps fit = fit_first_steps(g, kSpec, est);
  InferenceConfig cfg;
  cfg.n_bootstrap = 120;
  cfg.seed = 17;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, est, cfg);
  const std::vector<double> deltas = resolve_delta_grid(fit, est);
  const std::vector<double> ys = resolve_y_grid(fit, est, deltas);
  auto pipeline = [&](const FirstSteps& fs) {
    return estimate_dote(fs, deltas, ys);
  };
  BandEstimate one = numerical_delta(fit, boots, pipeline, 300, cfg);
  cfg.two_sided = true;
  BandEstimate two = numerical_delta(fit, boots, pipeline, 300, cfg);
  // each side of a two-sided band uses a higher quantile of the same
  // bootstrap ratios, so it can only be wider
  for (std::size_t k = 0; k < deltas.size(); ++k) {
    CHECK(two.c_lower[k] >= one.c_lower[k]);
    CHECK(two.c_upper[k] >= one.c_upper[k]);
    CHECK(two.band_lower[k] <= one.band_lower[k]);
    CHECK(two.band_upper[k] >= one.band_upper[k]);
  }
}

TEST_CASE("perturbing with zero scale returns the original fit") {
  GroupMatrices g = make_groups(50, 99);
  FirstSteps fit = fit_first_steps(g, kSpec, {});
  InferenceConfig cfg;
  cfg.n_bootstrap = 100;
  std::vector<FirstSteps> boots = bootstrap_first_steps(g, fit, {}, cfg);
  bool degenerate = true;
  FirstSteps p = perturb_first_steps(fit, boots[0], 0.0, &degenerate);
  CHECK_FALSE(degenerate);
  CHECK(p.F_target_last.cdf_values() == fit.F_target_last.cdf_values());
  CHECK(p.F0_target_last.cdf_values() == fit.F0_target_last.cdf_values());
  std::vector<double> ys = fit.F_recovery_resp.support(), o1, o2;
  p.recovery_cond.eval_sorted(0.1, ys, o1);
  fit.recovery_cond.eval_sorted(0.1, ys, o2);
  for (std::size_t i = 0; i < ys.size(); ++i)
    CHECK(o1[i] == Catch::Approx(o2[i]).margin(1e-12));
}

TEST_CASE("inference configuration is validated") {
  InferenceConfig cfg;
  cfg.n_bootstrap = 50;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.n_bootstrap = 500;
  cfg.r = 0.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.r = 0.25;
  cfg.alpha = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.alpha = 0.05;
  CHECK_NOTHROW(cfg.validate());
}

TEST_CASE("seed mixing separates adjacent streams") {
  CHECK(mix_seed(0, 0) != mix_seed(0, 1));
  CHECK(mix_seed(0, 0) != mix_seed(1, 0));
  CHECK(mix_seed(7, 3) == mix_seed(7, 3));
}
