#pragma once

// Engagement-indexed local average treatment effects under the gamma
// sensitivity model:
//
//   Delta(a) = Delta_ITT * (gamma + (1-gamma) h(a)) / (gamma + (1-gamma) mu_h)
//
// gamma = 0 is the classical IV (exclusion restriction) analysis, gamma = 1
// the ITT analysis. For fixed a the effect is monotone in gamma, so the
// extremes give sharp bounds; at h(a) = mu_h the effect equals Delta_ITT for
// every gamma.

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "late_bounds/error.hpp"
#include "late_bounds/estimators.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct LatePoint {
  double gamma = 0.0;
  double a = 0.0;
  double h_a = 0.0;
  double c_factor = 0.0;
  double delta = 0.0;
  double lower_bound = 0.0;
  double upper_bound = 0.0;
  /// True at gamma = 0, h(a) = 0 where the effect is zero by convention.
  bool convention = false;
};

struct EffectBounds {
  double lower = 0.0;
  double upper = 0.0;
};

struct XiResult {
  double gamma = 0.0;
  double xi = 0.0;
};

inline double c_factor(GammaValue gamma, double h_a, double mu_h) {
  const double g = gamma.value();
  const double denom = g + (1.0 - g) * mu_h;
  if (!(denom > 0.0)) throw Error(Errc::ZeroDenominator, "gamma = 0 with mu_h = 0");
  return (g + (1.0 - g) * h_a) / denom;
}

/// Sharp bounds over gamma in [0,1]: the interval between Delta_ITT and
/// Delta_ITT * h(a) / mu_h, oriented by sign.
inline EffectBounds effect_bounds(double delta_itt, double mu_h, double h_a) {
  if (!(mu_h > 0.0)) throw Error(Errc::ZeroInstrument, "bounds need mu_h > 0");
  const double wald_end = delta_itt * h_a / mu_h + 0.0;  // no -0
  return {std::min(delta_itt, wald_end), std::max(delta_itt, wald_end)};
}

inline EffectBounds bounds(const IttEstimate& itt, const MuHEstimate& mu, const Transform& h, double a) {
  return effect_bounds(itt.delta_itt, mu.mu_h, h(a));
}

inline LatePoint late_estimate(const IttEstimate& itt, const MuHEstimate& mu, GammaValue gamma,
                               const Transform& h, double a) {
  LatePoint p;
  p.gamma = gamma.value();
  p.a = a;
  p.h_a = h(a);
  p.convention = gamma.value() == 0.0 && p.h_a == 0.0;
  p.c_factor = c_factor(gamma, p.h_a, mu.mu_h);
  p.delta = p.convention ? 0.0 : itt.delta_itt * p.c_factor;
  const EffectBounds b = effect_bounds(itt.delta_itt, mu.mu_h, p.h_a);
  p.lower_bound = b.lower;
  p.upper_bound = b.upper;
  return p;
}

/// Heterogeneity Delta(1) - Delta(0) = Delta(1) (1 - gamma).
inline XiResult xi(const IttEstimate& itt, const MuHEstimate& mu, GammaValue gamma) {
  const double delta_one = itt.delta_itt * c_factor(gamma, 1.0, mu.mu_h);
  return {gamma.value(), delta_one * (1.0 - gamma.value())};
}

/// gamma* solving |xi_gamma| = t; |xi| exceeds t exactly for gamma < gamma*.
/// Empty when no gamma in [0,1] reaches t.
inline std::optional<GammaValue> gamma_for_xi_threshold(const IttEstimate& itt, const MuHEstimate& mu,
                                                        double t) {
  if (!(t > 0.0)) throw Error(Errc::NonPositiveThreshold, "xi threshold must be positive");
  const double d = std::abs(itt.delta_itt);
  if (!(mu.mu_h > 0.0)) throw Error(Errc::ZeroInstrument, "gamma search needs mu_h > 0");
  const double num = d - t * mu.mu_h;
  if (!(num > 0.0)) return std::nullopt;
  const double g = num / (num + t);
  if (g > 1.0) return std::nullopt;
  return GammaValue(g);
}

struct EngagementThreshold {
  enum class Status {
    Solved,        ///< unique a* with |Delta(a*)| = t
    AllExceed,     ///< |Delta(a)| >= t already at a = 0
    NoneReach,     ///< |Delta(a)| < t even at a = 1
    NonUnique,     ///< threshold transform; a* = zeta is the set boundary
  };
  Status status = Status::NoneReach;
  std::optional<double> a;
  /// Required h(a*) before inversion; NaN when the effect is constant in a.
  double h_target = 0.0;
};

/// Engagement level at which |Delta_gamma(a)| reaches t; effects exceed t
/// for engagement above the returned a*. No a* is returned when every
/// engagement level already exceeds t or none reaches it (see status).
inline EngagementThreshold engagement_for_effect_threshold(const IttEstimate& itt, const MuHEstimate& mu,
                                                           GammaValue gamma, const Transform& h, double t) {
  using Status = EngagementThreshold::Status;
  if (!(t > 0.0)) throw Error(Errc::NonPositiveThreshold, "effect threshold must be positive");
  if (!(mu.mu_h > 0.0)) throw Error(Errc::ZeroInstrument, "engagement search needs mu_h > 0");
  const double d = std::abs(itt.delta_itt);
  const double g = gamma.value();
  EngagementThreshold out;

  if (g == 1.0 || d == 0.0) {
    // Effect is constant in a.
    out.h_target = std::numeric_limits<double>::quiet_NaN();
    out.status = d >= t ? Status::AllExceed : Status::NoneReach;
    return out;
  }
  out.h_target = (t * (g + (1.0 - g) * mu.mu_h) / d - g) / (1.0 - g);
  if (out.h_target <= 0.0) {
    out.status = Status::AllExceed;
    return out;
  }
  if (out.h_target > 1.0) {
    out.status = Status::NoneReach;
    return out;
  }
  out.a = h.lower_inverse(out.h_target);
  out.status = h.invertible() ? Status::Solved : Status::NonUnique;
  return out;
}

}  // namespace late_bounds
