#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <memory>
#include <random>

#include "dte/counterfactual.hpp"
#include "oracles.hpp"

using namespace dte;

namespace {

// Deterministic uniform sample on (lo, hi): midpoints of n equal cells.
std::vector<double> uniform_grid(double lo, double hi, std::size_t n) {
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * (static_cast<double>(i) + 0.5) /
                    static_cast<double>(n);
  return v;
}

// Conditional CDF that is constant in its conditioning argument: each
// threshold carries the marginal frequency (an independence copula).
ConditionalCDF independence_cond(const std::vector<double>& support) {
  std::vector<double> thresholds = support;
  std::sort(thresholds.begin(), thresholds.end());
  std::vector<ThresholdFit> fits(thresholds.size());
  for (std::size_t k = 0; k < fits.size(); ++k) {
    fits[k].fallback = true;
    fits[k].freq = static_cast<double>(k + 1) /
                   static_cast<double>(thresholds.size());
  }
  return ConditionalCDF(std::move(thresholds), std::move(fits),
                        Link::Logistic);
}

}  // namespace

TEST_CASE("model-1 recovery resolver reproduces the documented table") {
  struct Row {
    const char *target, *recovery;
    bool extrapolated;
  };
  for (const Row& r : {Row{"111", "101", false}, Row{"001", "001", false},
                       Row{"110", "110", false}, Row{"000", "010", false},
                       Row{"011", "101", true}, Row{"101", "001", true},
                       Row{"010", "110", true}, Row{"100", "010", true}}) {
    GceSpec s = GceSpec::resolve(GceModel::Model1, Pattern::parse(r.target));
    CHECK(s.recovery == Pattern::parse(r.recovery));
    CHECK(s.resolver_extrapolated == r.extrapolated);
    CHECK(s.recovery.bit(2) == s.target.bit(2));
    s.validate();
  }
}

TEST_CASE("model-2 recovery always flips the last period") {
  for (const char* t : {"111", "001", "110", "000", "011", "101", "010", "100"}) {
    GceSpec s = GceSpec::resolve(GceModel::Model2, Pattern::parse(t));
    CHECK(s.recovery.bit(0) == s.target.bit(0));
    CHECK(s.recovery.bit(1) == s.target.bit(1));
    CHECK(s.recovery.bit(2) == 1 - s.target.bit(2));
    CHECK_FALSE(s.resolver_extrapolated);
  }
}

TEST_CASE("spec overrides are validated before any computation") {
  CHECK_NOTHROW(GceSpec::with_recovery(GceModel::Model1, Pattern::parse("111"),
                                       Pattern::parse("001")));
  CHECK(GceSpec::with_recovery(GceModel::Model1, Pattern::parse("111"),
                               Pattern::parse("001"))
            .recovery_overridden);
  CHECK_THROWS_AS(GceSpec::with_recovery(GceModel::Model1,
                                         Pattern::parse("111"),
                                         Pattern::parse("110")),
                  ConfigError);
  CHECK_THROWS_AS(GceSpec::with_recovery(GceModel::Model2,
                                         Pattern::parse("111"),
                                         Pattern::parse("101")),
                  ConfigError);
}

TEST_CASE("cic control differs from the target only in the last period") {
  CicSpec s = CicSpec::resolve(Pattern::parse("110"));
  CHECK(s.control == Pattern::parse("111"));
}

TEST_CASE("cic with identical previous-period distributions is the identity") {
  StepDistribution prev = ecdf_fit({1.0, 2.0, 3.0, 7.0});
  StepDistribution last = ecdf_fit({0.5, 1.5, 2.5, 3.5, 4.5});
  StepDistribution out = cic_marginal(prev, prev, last);
  CHECK(out.support() == last.support());
  CHECK(out.cdf_values() == last.cdf_values());
}

TEST_CASE("cic composition recovers the analytic uniform case") {
  // target prev ~ U(0,1), control prev ~ U(0,2), control last ~ U(0,2):
  // the composed counterfactual is U(0,1), i.e. F(y) = min(y, 1).
  const std::size_t n = 4000;
  StepDistribution tp = ecdf_fit(uniform_grid(0, 1, n));
  StepDistribution cp = ecdf_fit(uniform_grid(0, 2, n));
  StepDistribution cl = ecdf_fit(uniform_grid(0, 2, n));
  StepDistribution out = cic_marginal(tp, cp, cl);
  double gap = 0.0;
  for (double y = 0.0; y <= 2.0; y += 0.01)
    gap = std::max(gap, std::abs(out.cdf(y) - std::min(y, 1.0)));
  CHECK(gap < 0.01);
}

TEST_CASE("cic maps a degenerate last-period distribution to one atom") {
  StepDistribution tp = ecdf_fit({1.0, 2.0, 3.0});
  StepDistribution cp = ecdf_fit({2.0, 4.0, 6.0});
  StepDistribution cl({5.0}, {1.0});
  StepDistribution out = cic_marginal(tp, cp, cl);
  REQUIRE(out.support() == std::vector<double>{5.0});
  CHECK(out.cdf_values() == std::vector<double>{1.0});
  // direct three-fold evaluation at the atom
  CHECK(tp.cdf(cp.quantile(cl.cdf(5.0))) == 1.0);
}

TEST_CASE("independence recovery collapses the conditional to the marginal") {
  const std::size_t n = 50;
  std::vector<double> rec = uniform_grid(0, 1, n);
  StepDistribution f0 = ecdf_fit(uniform_grid(2, 3, n));
  StepDistribution ftcv = ecdf_fit(uniform_grid(-1, 1, 30));
  StepDistribution frr = ecdf_fit(rec);
  StepDistribution frcv = ecdf_fit(uniform_grid(5, 6, 30));
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  CounterfactualConditional cf = gce_conditional_marginal(
      spec, f0, ftcv, std::make_shared<ConditionalCDF>(independence_cond(rec)),
      frr, frcv);
  for (double yp : {-0.9, 0.0, 0.7}) {
    for (double y0 : f0.support()) {
      CHECK(cf.eval(y0, yp) == Catch::Approx(f0.cdf(y0)).margin(1e-12));
    }
  }
}

TEST_CASE("comonotone recovery approaches the rank indicator") {
  std::mt19937_64 rng(71);
  std::normal_distribution<double> gauss;
  const std::size_t n = 3000;
  std::vector<double> lag(n);
  for (double& v : lag) v = gauss(rng);
  std::vector<double> resp = lag;  // comonotone pair

  StepDistribution f0 = testor::normal_step(400);
  StepDistribution ftcv = testor::normal_step(400);
  ConditionalCDF rc = dr_fit(resp, lag, DrConfig{.link = Link::Probit});
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  CounterfactualConditional cf = gce_conditional_marginal(
      spec, f0, ftcv, std::make_shared<ConditionalCDF>(rc), ecdf_fit(resp),
      ecdf_fit(lag));
  // away from the diagonal the output must match 1{F0(y0) >= Ftcv(y')}
  for (double yp = -1.5; yp <= 1.5; yp += 0.25) {
    for (double y0 = -2.0; y0 <= 2.0; y0 += 0.25) {
      const double margin = f0.cdf(y0) - ftcv.cdf(yp);
      if (std::abs(margin) < 0.1) continue;
      const double want = margin >= 0 ? 1.0 : 0.0;
      CHECK(std::abs(cf.eval(y0, yp) - want) < 0.1);
    }
  }
}

TEST_CASE("gaussian-copula recovery matches the conditional-normal oracle") {
  std::vector<double> lag, resp;
  testor::gaussian_pairs(10000, 0.5, 1234, &lag, &resp);
  // arbitrary marginal on the response side: strictly increasing transform
  std::vector<double> resp_t = resp;
  for (double& v : resp_t) v = std::exp(v);

  StepDistribution f0 = testor::normal_step();
  StepDistribution ftcv = testor::normal_step();
  // finer threshold grid: at n = 10,000 the default 100 thresholds leave
  // ~0.02 of pure step-interpolation error on top of sampling noise
  ConditionalCDF rc =
      dr_fit(resp_t, lag, DrConfig{.grid_size = 400, .link = Link::Probit});
  GceSpec spec = GceSpec::resolve(GceModel::Model2, Pattern::parse("111"));
  CounterfactualConditional cf = gce_conditional_marginal(
      spec, f0, ftcv, std::make_shared<ConditionalCDF>(rc), ecdf_fit(resp_t),
      ecdf_fit(lag));
  const double s = std::sqrt(0.75);
  double gap = 0.0;
  for (double yp = -1.5; yp <= 1.5; yp += 0.25)
    for (double y0 = -2.5; y0 <= 2.5; y0 += 0.125)
      gap = std::max(gap,
                     std::abs(cf.eval(y0, yp) -
                              normal_cdf((y0 - 0.5 * yp) / s)));
  CHECK(gap <= 0.02);
}

TEST_CASE("composition is invariant to response-side monotone transforms") {
  std::vector<double> lag, resp;
  testor::gaussian_pairs(800, 0.4, 99, &lag, &resp);
  std::vector<double> resp_t = resp;
  for (double& v : resp_t) v = std::atan(v) * 3.0;  // strictly increasing

  StepDistribution f0 = ecdf_fit(uniform_grid(-1, 1, 200));
  StepDistribution ftcv = ecdf_fit(uniform_grid(-2, 2, 150));
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  auto build = [&](const std::vector<double>& r) {
    return gce_conditional_marginal(
        spec, f0, ftcv,
        std::make_shared<ConditionalCDF>(dr_fit(r, lag)), ecdf_fit(r),
        ecdf_fit(lag));
  };
  CounterfactualConditional a = build(resp);
  CounterfactualConditional b = build(resp_t);
  for (double yp = -1.5; yp <= 1.5; yp += 0.5)
    for (double y0 = -0.9; y0 <= 0.9; y0 += 0.1)
      CHECK(a.eval(y0, yp) == Catch::Approx(b.eval(y0, yp)).margin(1e-12));
}

TEST_CASE("averaging the conditional reproduces the counterfactual marginal") {
  // law of total probability at n = 5000 on a design where the recovery
  // copula equals the target's: sup gap <= 0.03
  const double rho = 0.6;
  std::vector<double> tgt_prev, tgt_last, rec_lag, rec_resp;
  testor::gaussian_pairs(5000, rho, 7, &tgt_prev, &tgt_last);
  testor::gaussian_pairs(5000, rho, 8, &rec_lag, &rec_resp);

  StepDistribution f0 = ecdf_fit(tgt_last);
  StepDistribution ftcv = ecdf_fit(tgt_prev);
  ConditionalCDF rc = dr_fit(rec_resp, rec_lag, DrConfig{.link = Link::Probit});
  GceSpec spec = GceSpec::resolve(GceModel::Model2, Pattern::parse("111"));
  CounterfactualConditional cf = gce_conditional_marginal(
      spec, f0, ftcv, std::make_shared<ConditionalCDF>(rc), ecdf_fit(rec_resp),
      ecdf_fit(rec_lag));

  std::vector<double> ys;
  for (double y = -2.5; y <= 2.5; y += 0.05) ys.push_back(y);
  std::vector<double> avg(ys.size(), 0.0), out;
  for (double yp : tgt_prev) {
    cf.eval_sorted(yp, ys, out);
    for (std::size_t i = 0; i < ys.size(); ++i) avg[i] += out[i];
  }
  double gap = 0.0;
  for (std::size_t i = 0; i < ys.size(); ++i)
    gap = std::max(gap, std::abs(avg[i] / 5000.0 - f0.cdf(ys[i])));
  CHECK(gap <= 0.03);
}

TEST_CASE("lagged joint: independence recovery gives the product measure") {
  std::vector<double> rx, ry;
  for (int i = 1; i <= 10; ++i)
    for (int j = 1; j <= 10; ++j) {
      rx.push_back(i);
      ry.push_back(j);
    }
  StepDistribution f0 = ecdf_fit(uniform_grid(0, 1, 10));
  StepDistribution f1 = ecdf_fit(uniform_grid(0, 1, 10));
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  GridSurface s = lagged_joint(spec, f0, f1, rx, ry, f0.support(), f1.support());
  for (std::size_t i = 0; i < s.x.size(); ++i)
    for (std::size_t j = 0; j < s.y.size(); ++j)
      CHECK(s.at(i, j) ==
            Catch::Approx(f0.cdf(s.x[i]) * f1.cdf(s.y[j])).margin(1e-12));
}

TEST_CASE("lagged joint: comonotone recovery attains the upper frechet bound") {
  std::vector<double> rx, ry;
  for (int i = 1; i <= 25; ++i) {
    rx.push_back(i);
    ry.push_back(i * i);  // still comonotone
  }
  StepDistribution f0 = ecdf_fit(uniform_grid(0, 1, 25));
  StepDistribution f1 = ecdf_fit(uniform_grid(2, 5, 25));
  GceSpec spec = GceSpec::resolve(GceModel::Model2, Pattern::parse("111"));
  GridSurface s = lagged_joint(spec, f0, f1, rx, ry, f0.support(), f1.support());
  for (std::size_t i = 0; i < s.x.size(); ++i)
    for (std::size_t j = 0; j < s.y.size(); ++j)
      CHECK(s.at(i, j) ==
            Catch::Approx(std::min(f0.cdf(s.x[i]), f1.cdf(s.y[j])))
                .margin(1e-12));
}

TEST_CASE("lagged joint: gaussian recovery matches the binormal oracle") {
  std::vector<double> rx, ry;
  testor::gaussian_pairs(10000, 0.5, 55, &rx, &ry);
  StepDistribution f0 = testor::normal_step();
  StepDistribution f1 = testor::normal_step();
  std::vector<double> grid;
  for (double y = -2.0; y <= 2.0; y += 0.2) grid.push_back(y);
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  GridSurface s = lagged_joint(spec, f0, f1, rx, ry, grid, grid);
  double gap = 0.0;
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j)
      gap = std::max(gap, std::abs(s.at(i, j) - testor::binormal_cdf(
                                                    grid[i], grid[j], 0.5)));
  CHECK(gap <= 0.02);
}

TEST_CASE("lagged joint is frechet-consistent at every node") {
  std::vector<double> rx, ry;
  testor::gaussian_pairs(500, -0.4, 77, &rx, &ry);
  StepDistribution f0 = ecdf_fit(rx);
  StepDistribution f1 = ecdf_fit(ry);
  std::vector<double> grid;
  for (double y = -3.0; y <= 3.0; y += 0.1) grid.push_back(y);
  GceSpec spec = GceSpec::resolve(GceModel::Model1, Pattern::parse("111"));
  GridSurface s = lagged_joint(spec, f0, f1, rx, ry, grid, grid);
  for (std::size_t i = 0; i < grid.size(); ++i)
    for (std::size_t j = 0; j < grid.size(); ++j) {
      const double a = f0.cdf(grid[i]), b = f1.cdf(grid[j]);
      const double hi = std::min(a, b);
      // a + b - 1 can round one ulp past min(a, b) when the other marginal
      // is 1; the envelope is ordered, so fold that back.
      const double lo = std::min(std::max(a + b - 1.0, 0.0), hi);
      CHECK(s.at(i, j) >= lo);
      CHECK(s.at(i, j) <= hi);
    }
}
