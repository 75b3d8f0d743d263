#pragma once

// Counterfactual identification: the change-in-changes unconditional marginal
// and the copula-recovery conditional marginal (Model 1 / Model 2), plus the
// implied lagged joint distribution.

#include <algorithm>
#include <cmath>
#include <memory>
#include <utility>
#include <vector>

#include "dte/distributions.hpp"
#include "dte/errors.hpp"
#include "dte/panel.hpp"

namespace dte {

enum class GceModel { Model1, Model2 };

inline const char* gce_model_name(GceModel m) {
  return m == GceModel::Model1 ? "model1" : "model2";
}

// Which group's observed bivariate copula stands in for the target group's
// unobserved lagged copula, and how its outcomes are wired in.
struct GceSpec {
  GceModel model = GceModel::Model1;
  Pattern target;
  Pattern recovery;
  bool recovery_overridden = false;
  // True when the recovery rule was applied outside the four cases it was
  // designed around; surfaced in run metadata.
  bool resolver_extrapolated = false;

  // Model 1: keep the last-period arm and realize the target's final switch
  // one period earlier: (a,b,c) -> (b, 1-c, c). Model 2: flip the last
  // period: (a,b,c) -> (a, b, 1-c).
  static GceSpec resolve(GceModel model, const Pattern& target) {
    if (target.size() != 3)
      throw ConfigError("gce spec: target pattern must have length 3");
    const int a = target.bit(0), b = target.bit(1), c = target.bit(2);
    GceSpec s;
    s.model = model;
    s.target = target;
    if (model == GceModel::Model1) {
      s.recovery = Pattern({b, 1 - c, c});
      const bool documented = (a == b);  // (1,1,1),(0,0,1),(1,1,0),(0,0,0)
      s.resolver_extrapolated = !documented;
    } else {
      s.recovery = Pattern({a, b, 1 - c});
    }
    return s;
  }

  static GceSpec with_recovery(GceModel model, const Pattern& target,
                               const Pattern& recovery) {
    GceSpec s = resolve(model, target);
    s.recovery = recovery;
    s.recovery_overridden = true;
    s.validate();
    return s;
  }

  void validate() const {
    if (target.size() != 3 || recovery.size() != 3)
      throw ConfigError("gce spec: patterns must have length 3");
    if (model == GceModel::Model1) {
      if (recovery.bit(2) != target.bit(2))
        throw ConfigError(
            "gce spec: model-1 recovery must share the target's last-period "
            "treatment");
    } else {
      if (recovery.bit(0) != target.bit(0) ||
          recovery.bit(1) != target.bit(1) ||
          recovery.bit(2) != 1 - target.bit(2))
        throw ConfigError(
            "gce spec: model-2 recovery must equal the target with the last "
            "period flipped");
    }
  }
};

// Control group for the change-in-changes step: target with the last-period
// treatment flipped.
struct CicSpec {
  Pattern target;
  Pattern control;

  static CicSpec resolve(const Pattern& target) {
    if (target.size() != 3)
      throw ConfigError("cic spec: target pattern must have length 3");
    CicSpec s;
    s.target = target;
    s.control =
        Pattern({target.bit(0), target.bit(1), 1 - target.bit(2)});
    return s;
  }
};

// y -> F_target_prev(F_control_prev^{-1}(F_control_last(y))), evaluated on
// the support of F_control_last. When the two previous-period distributions
// coincide the composition is the identity and the control marginal is
// returned unchanged.
inline StepDistribution cic_marginal(const StepDistribution& F_target_prev,
                                     const StepDistribution& F_control_prev,
                                     const StepDistribution& F_control_last) {
  if (F_target_prev.support() == F_control_prev.support() &&
      F_target_prev.cdf_values() == F_control_prev.cdf_values())
    return F_control_last;
  const auto& s = F_control_last.support();
  const auto& u = F_control_last.cdf_values();
  std::vector<double> v(s.size());
  for (std::size_t i = 0; i < s.size(); ++i)
    v[i] = F_target_prev.cdf(F_control_prev.quantile(u[i]));
  v = rearrange_monotone(std::move(v));
  // Complete the distribution at the top of the evaluated support: any mass
  // the composition fails to reach is assigned to the last atom.
  v.back() = 1.0;
  return StepDistribution(s, std::move(v));
}

// F(y0 | y') = recovery_cond( F_recovery_resp^{-1}(F0_target_last(y0))
//                            | F_recovery_cond_var^{-1}(F_target_cond_var(y')) )
class CounterfactualConditional : public ConditionalLaw {
 public:
  CounterfactualConditional(std::shared_ptr<const ConditionalLaw> recovery_cond,
                            StepDistribution F0_target_last,
                            StepDistribution F_target_cond_var,
                            StepDistribution F_recovery_resp,
                            StepDistribution F_recovery_cond_var)
      : recovery_cond_(std::move(recovery_cond)),
        F0_target_last_(std::move(F0_target_last)),
        F_target_cond_var_(std::move(F_target_cond_var)),
        F_recovery_resp_(std::move(F_recovery_resp)),
        F_recovery_cond_var_(std::move(F_recovery_cond_var)) {}

  void eval_sorted(double cond, const std::vector<double>& ys,
                   std::vector<double>& out) const override {
    const double z =
        F_recovery_cond_var_.quantile(F_target_cond_var_.cdf(cond));
    std::vector<double> ts(ys.size());
    for (std::size_t i = 0; i < ys.size(); ++i)
      ts[i] = F_recovery_resp_.quantile(F0_target_last_.cdf(ys[i]));
    recovery_cond_->eval_sorted(z, ts, out);
    // Nondecreasing in y0 by construction; clip for numeric safety.
    for (double& p : out) p = std::clamp(p, 0.0, 1.0);
  }

  const StepDistribution& counterfactual_marginal() const {
    return F0_target_last_;
  }

 private:
  std::shared_ptr<const ConditionalLaw> recovery_cond_;
  StepDistribution F0_target_last_;
  StepDistribution F_target_cond_var_;
  StepDistribution F_recovery_resp_;
  StepDistribution F_recovery_cond_var_;
};

inline CounterfactualConditional gce_conditional_marginal(
    const GceSpec& spec, StepDistribution F0_target_last,
    StepDistribution F_target_cond_var,
    std::shared_ptr<const ConditionalLaw> recovery_cond,
    StepDistribution F_recovery_resp, StepDistribution F_recovery_cond_var) {
  spec.validate();
  return CounterfactualConditional(
      std::move(recovery_cond), std::move(F0_target_last),
      std::move(F_target_cond_var), std::move(F_recovery_resp),
      std::move(F_recovery_cond_var));
}

// C_n(u, v) = (1/n) #{i : rank(x_i)/n <= u and rank(y_i)/n <= v}.
class EmpiricalCopula {
 public:
  EmpiricalCopula(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2)
      throw InsufficientDataError("empirical copula: need paired samples");
    n_ = x.size();
    u_.resize(n_);
    v_.resize(n_);
    std::vector<std::size_t> idx(n_);
    auto ranks = [&](const std::vector<double>& w, std::vector<double>& out) {
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(),
                [&](std::size_t a, std::size_t b) { return w[a] < w[b]; });
      // Max rank on ties so 1{rank/n <= u} counts 1{w_i <= w-quantile}.
      for (std::size_t i = 0; i < n_;) {
        std::size_t j = i;
        while (j < n_ && w[idx[j]] == w[idx[i]]) ++j;
        for (std::size_t k = i; k < j; ++k)
          out[idx[k]] = static_cast<double>(j) / static_cast<double>(n_);
        i = j;
      }
    };
    ranks(x, u_);
    ranks(y, v_);
  }

  double eval(double u, double v) const {
    std::size_t c = 0;
    for (std::size_t i = 0; i < n_; ++i)
      if (u_[i] <= u + 1e-12 && v_[i] <= v + 1e-12) ++c;
    return static_cast<double>(c) / static_cast<double>(n_);
  }

  std::size_t size() const { return n_; }

 private:
  std::size_t n_ = 0;
  std::vector<double> u_, v_;
};

// Rectangular grid surface: value(i, j) = v[i * y.size() + j] for x[i], y[j].
struct GridSurface {
  std::vector<double> x;
  std::vector<double> y;
  std::vector<double> v;

  double& at(std::size_t i, std::size_t j) { return v[i * y.size() + j]; }
  double at(std::size_t i, std::size_t j) const { return v[i * y.size() + j]; }
};

// F(y0, y') = C_recovery(F0_target_last(y0), F_target_cond_var(y')), clamped
// node-wise into the Fréchet-Hoeffding envelope of the two marginals.
inline GridSurface lagged_joint(const GceSpec& spec,
                                const StepDistribution& F0_target_last,
                                const StepDistribution& F_target_cond_var,
                                const std::vector<double>& recovery_pair_x,
                                const std::vector<double>& recovery_pair_y,
                                const std::vector<double>& y0_grid,
                                const std::vector<double>& y1_grid) {
  spec.validate();
  EmpiricalCopula cop(recovery_pair_x, recovery_pair_y);
  GridSurface out;
  out.x = y0_grid;
  out.y = y1_grid;
  out.v.resize(y0_grid.size() * y1_grid.size());
  for (std::size_t i = 0; i < y0_grid.size(); ++i) {
    const double f0 = F0_target_last.cdf(y0_grid[i]);
    for (std::size_t j = 0; j < y1_grid.size(); ++j) {
      const double f1 = F_target_cond_var.cdf(y1_grid[j]);
      const double hi = std::min(f0, f1);
      // f0 + f1 - 1 can round one ulp above min(f0, f1) when the other
      // marginal sits at 1; keep the envelope ordered.
      const double lo = std::min(std::max(f0 + f1 - 1.0, 0.0), hi);
      out.at(i, j) = std::clamp(cop.eval(f0, f1), lo, hi);
    }
  }
  return out;
}

}  // namespace dte
