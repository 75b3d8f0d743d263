#pragma once

// End-to-end first-step estimation for one target group: marginals, the CiC
// counterfactual marginal, distribution regressions, and their composition
// into DoTE/QoTE bound curves.

#include <memory>
#include <vector>

#include "dte/bounds.hpp"
#include "dte/counterfactual.hpp"
#include "dte/distributions.hpp"
#include "dte/errors.hpp"
#include "dte/panel.hpp"

namespace dte {

struct EstimatorConfig {
  DrConfig dr;
  std::size_t min_group_size = 20;
  std::size_t delta_grid_size = 201;
  std::size_t y_grid_cap = 1000;
  std::vector<double> delta_grid;  // empty: default span
  std::vector<double> y_grid;      // empty: union of supports
};

// Outcome matrices (units x 3 periods, oldest first) for the groups one
// target/model combination needs. For Model 2 the control and recovery
// matrices coincide.
struct GroupMatrices {
  std::vector<std::vector<double>> target;
  std::vector<std::vector<double>> control;
  std::vector<std::vector<double>> recovery;
};

inline GroupMatrices extract_groups(const PanelDataset& data,
                                    const GroupIndex& index,
                                    const GceSpec& spec,
                                    const GroupFilter& filter = {},
                                    std::size_t min_group_size = 20) {
  spec.validate();
  const CicSpec cic = CicSpec::resolve(spec.target);
  GroupMatrices g;
  g.target = group_matrix(data, index, spec.target, filter, min_group_size);
  g.control = group_matrix(data, index, cic.control, filter, min_group_size);
  g.recovery = spec.recovery == cic.control
                   ? g.control
                   : group_matrix(data, index, spec.recovery, filter,
                                  min_group_size);
  return g;
}

// Every estimated object the bound pipeline consumes. All members are value
// types so a perturbed or resampled copy is independent of the original.
struct FirstSteps {
  GceSpec spec;

  std::vector<double> target_prev;  // conditioning values Y_{t-1} in target

  StepDistribution F_target_prev;
  StepDistribution F_target_last;   // observed arm at t in the target group
  StepDistribution F_control_prev;
  StepDistribution F_control_last;
  StepDistribution F0_target_last;  // CiC counterfactual marginal at t

  StepDistribution F_recovery_resp;
  StepDistribution F_recovery_cond_var;

  ConditionalCDF target_cond;    // observed arm at t given Y_{t-1}, target
  ConditionalCDF recovery_cond;  // recovery pair: response given lag

  DrFitReport target_report;
  DrFitReport recovery_report;
};

// When `base` is given (bootstrap refits), distribution regressions reuse its
// threshold grids so perturbation is well defined.
inline FirstSteps fit_first_steps(const GroupMatrices& g, const GceSpec& spec,
                                  const EstimatorConfig& cfg = {},
                                  const FirstSteps* base = nullptr) {
  spec.validate();
  FirstSteps fs;
  fs.spec = spec;

  const std::vector<double> target_prev = column(g.target, 1);
  const std::vector<double> target_last = column(g.target, 2);
  const std::vector<double> control_prev = column(g.control, 1);
  const std::vector<double> control_last = column(g.control, 2);

  fs.target_prev = target_prev;
  fs.F_target_prev = ecdf_fit(target_prev);
  fs.F_target_last = ecdf_fit(target_last);
  fs.F_control_prev = ecdf_fit(control_prev);
  fs.F_control_last = ecdf_fit(control_last);
  fs.F0_target_last =
      cic_marginal(fs.F_target_prev, fs.F_control_prev, fs.F_control_last);

  // Model 1 pairs the recovery group's (t-2, t-1) outcomes; Model 2 its
  // (t-1, t) outcomes.
  const std::size_t lag_col = spec.model == GceModel::Model1 ? 0 : 1;
  const std::vector<double> rec_lag = column(g.recovery, lag_col);
  const std::vector<double> rec_resp = column(g.recovery, lag_col + 1);
  fs.F_recovery_cond_var = ecdf_fit(rec_lag);
  fs.F_recovery_resp = ecdf_fit(rec_resp);

  if (base) {
    fs.target_cond = dr_fit_thresholds(target_last, target_prev,
                                       base->target_cond.thresholds(), cfg.dr);
    fs.recovery_cond = dr_fit_thresholds(
        rec_resp, rec_lag, base->recovery_cond.thresholds(), cfg.dr);
  } else {
    fs.target_cond = dr_fit(target_last, target_prev, cfg.dr);
    fs.recovery_cond = dr_fit(rec_resp, rec_lag, cfg.dr);
  }
  fs.target_report = fs.target_cond.report();
  fs.recovery_report = fs.recovery_cond.report();
  return fs;
}

inline FirstSteps fit_first_steps(const PanelDataset& data,
                                  const GroupIndex& index, const GceSpec& spec,
                                  const EstimatorConfig& cfg = {},
                                  const GroupFilter& filter = {}) {
  return fit_first_steps(
      extract_groups(data, index, spec, filter, cfg.min_group_size), spec, cfg);
}

inline CounterfactualConditional counterfactual_law(const FirstSteps& fs) {
  return CounterfactualConditional(
      std::make_shared<ConditionalCDF>(fs.recovery_cond), fs.F0_target_last,
      fs.F_target_prev, fs.F_recovery_resp, fs.F_recovery_cond_var);
}

// Distributions of the two potential outcomes at t implied by the fit:
// the observed arm's ECDF and the CiC counterfactual, ordered (Y1, Y0).
inline std::pair<const StepDistribution*, const StepDistribution*>
implied_marginals(const FirstSteps& fs) {
  const bool treated_last = fs.spec.target.bit(2) == 1;
  return treated_last
             ? std::make_pair(&fs.F_target_last, &fs.F0_target_last)
             : std::make_pair(&fs.F0_target_last, &fs.F_target_last);
}

inline std::vector<double> resolve_delta_grid(const FirstSteps& fs,
                                              const EstimatorConfig& cfg) {
  if (!cfg.delta_grid.empty()) return cfg.delta_grid;
  auto [f1, f0] = implied_marginals(fs);
  return default_delta_grid(*f1, *f0, cfg.delta_grid_size);
}

inline std::vector<double> resolve_y_grid(const FirstSteps& fs,
                                          const EstimatorConfig& cfg,
                                          const std::vector<double>& deltas) {
  if (!cfg.y_grid.empty()) return cfg.y_grid;
  auto [f1, f0] = implied_marginals(fs);
  const double pad =
      std::max(std::abs(deltas.front()), std::abs(deltas.back()));
  return default_y_grid(f1->support(), f0->support(), pad, cfg.y_grid_cap);
}

// DoTE bounds for the fitted target group: conditional WD bounds of the
// observed-arm conditional against the counterfactual conditional, averaged
// over the target group's previous-period outcomes. `cond_values` overrides
// the averaging set (single value: conditional-on-past-outcome curves).
inline BoundCurve estimate_dote(const FirstSteps& fs,
                                const std::vector<double>& delta_grid,
                                const std::vector<double>& y_grid,
                                const std::vector<double>* cond_values = nullptr) {
  const CounterfactualConditional cf = counterfactual_law(fs);
  const ConditionalLaw* f1 = &fs.target_cond;
  const ConditionalLaw* f0 = &cf;
  if (fs.spec.target.bit(2) == 0) std::swap(f1, f0);
  return dote_bounds(*f1, *f0, cond_values ? *cond_values : fs.target_prev,
                     delta_grid, y_grid);
}

inline BoundCurve estimate_dote(const FirstSteps& fs,
                                const EstimatorConfig& cfg = {}) {
  const std::vector<double> deltas = resolve_delta_grid(fs, cfg);
  const std::vector<double> ys = resolve_y_grid(fs, cfg, deltas);
  return estimate_dote(fs, deltas, ys);
}

// No-assumption baseline on the implied unconditional marginals.
inline BoundCurve estimate_baseline(const FirstSteps& fs,
                                    const std::vector<double>& delta_grid,
                                    const std::vector<double>& y_grid) {
  auto [f1, f0] = implied_marginals(fs);
  return wd_baseline(*f1, *f0, delta_grid, y_grid);
}

}  // namespace dte
