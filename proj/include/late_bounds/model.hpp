#pragma once

// Domain types for a two-arm trial with post-randomization engagement.
//
// Engagement in the control arm is structurally zero: a subject cannot
// engage with an intervention they never received. Validation enforces that,
// positivity (both arms present) and a non-trivial instrument (some treated
// subject engages).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct TrialRow {
  int z = 0;
  double a = 0.0;
  double y = 0.0;
  std::vector<double> covariates;

  friend bool operator==(const TrialRow&, const TrialRow&) = default;
};

/// Unvalidated input record. `a` may be absent for control rows.
struct RawRow {
  double z = 0.0;
  std::optional<double> a;
  double y = 0.0;
  std::vector<double> covariates;
};

class TrialDataset {
 public:
  const std::vector<TrialRow>& rows() const noexcept { return rows_; }
  const std::vector<std::string>& covariate_names() const noexcept { return names_; }
  std::size_t size() const noexcept { return rows_.size(); }
  std::size_t n_control() const noexcept { return n0_; }
  std::size_t n_treated() const noexcept { return n1_; }
  std::size_t covariate_count() const noexcept { return names_.size(); }

  /// Index of a named covariate, if present.
  std::optional<std::size_t> covariate_index(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i)
      if (names_[i] == name) return i;
    return std::nullopt;
  }

  std::vector<RawRow> to_raw() const {
    std::vector<RawRow> out;
    out.reserve(rows_.size());
    for (const auto& r : rows_) out.push_back({static_cast<double>(r.z), r.a, r.y, r.covariates});
    return out;
  }

  /// Rows selected by index (with repetition), as drawn by a bootstrap.
  /// Throws EmptyArm or ZeroInstrument when the draw loses an arm or all
  /// treated engagement.
  TrialDataset resample(std::span<const std::size_t> idx) const {
    TrialDataset out;
    out.names_ = names_;
    out.rows_.reserve(idx.size());
    bool any_engaged = false;
    for (std::size_t i : idx) {
      const TrialRow& r = rows_.at(i);
      (r.z == 1 ? out.n1_ : out.n0_) += 1;
      any_engaged = any_engaged || (r.z == 1 && r.a > 0.0);
      out.rows_.push_back(r);
    }
    if (out.n0_ == 0 || out.n1_ == 0) throw Error(Errc::EmptyArm, "resample lost an arm");
    if (!any_engaged) throw Error(Errc::ZeroInstrument, "resample has no engaged treated subject");
    return out;
  }

  friend bool operator==(const TrialDataset&, const TrialDataset&) = default;

  friend TrialDataset validate_dataset(std::span<const RawRow> raw,
                                       std::vector<std::string> covariate_names);

 private:
  TrialDataset() = default;
  std::vector<TrialRow> rows_;
  std::vector<std::string> names_;
  std::size_t n0_ = 0;
  std::size_t n1_ = 0;
};

inline TrialDataset validate_dataset(std::span<const RawRow> raw,
                                     std::vector<std::string> covariate_names) {
  TrialDataset ds;
  ds.rows_.reserve(raw.size());
  ds.names_ = std::move(covariate_names);
  bool any_engaged = false;

  for (std::size_t i = 0; i < raw.size(); ++i) {
    const RawRow& r = raw[i];
    const std::string where = "row " + std::to_string(i + 1);
    if (r.z != 0.0 && r.z != 1.0) {
      throw Error(Errc::InvalidArm, where + ": arm indicator must be 0 or 1");
    }
    const int z = static_cast<int>(r.z);
    double a = 0.0;
    if (r.a) {
      a = *r.a;
      if (!(a >= 0.0 && a <= 1.0)) {
        throw Error(Errc::OutOfRangeEngagement, where + ": engagement " + std::to_string(a) + " outside [0,1]");
      }
      if (z == 0 && a != 0.0) {
        throw Error(Errc::ControlEngagement, where + ": control row has engagement " + std::to_string(a));
      }
    } else if (z == 1) {
      throw Error(Errc::MissingValue, where + ": engagement missing in intervention arm");
    }
    if (!std::isfinite(r.y)) throw Error(Errc::NonFiniteOutcome, where + ": outcome is not finite");
    if (r.covariates.size() != ds.names_.size()) {
      throw Error(Errc::CovariateArity, where + ": expected " + std::to_string(ds.names_.size()) +
                                            " covariates, got " + std::to_string(r.covariates.size()));
    }
    for (double c : r.covariates) {
      if (!std::isfinite(c)) throw Error(Errc::MissingValue, where + ": covariate is not finite");
    }
    (z == 1 ? ds.n1_ : ds.n0_) += 1;
    any_engaged = any_engaged || (z == 1 && a > 0.0);
    ds.rows_.push_back({z, a, r.y, r.covariates});
  }

  if (ds.n0_ == 0) throw Error(Errc::EmptyArm, "control arm has no rows");
  if (ds.n1_ == 0) throw Error(Errc::EmptyArm, "intervention arm has no rows");
  if (!any_engaged) throw Error(Errc::ZeroInstrument, "no intervention-arm subject has positive engagement");
  return ds;
}

inline TrialDataset validate_dataset(const TrialDataset& ds) {
  const auto raw = ds.to_raw();
  return validate_dataset(raw, ds.covariate_names());
}

/// Sensitivity parameter: ratio of the never-engager effect to the
/// engagement-compliant effect, bounded to [0,1].
class GammaValue {
 public:
  explicit GammaValue(double v) : value_(v) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(Errc::InvalidGamma, "gamma " + std::to_string(v) + " outside [0,1]");
    }
  }
  double value() const noexcept { return value_; }
  friend auto operator<=>(const GammaValue&, const GammaValue&) = default;

 private:
  double value_;
};

enum class IttMethod { DiffMeans, OlsAdjusted };

/// Spline term on one covariate; empty knots mean "three inner quartiles".
struct SplineTerm {
  std::string column;
  std::vector<double> knots;
};

struct AdjustmentSpec {
  std::vector<std::string> linear;
  std::vector<SplineTerm> splines;
  bool empty() const noexcept { return linear.empty() && splines.empty(); }
};

struct AnalysisConfig {
  std::vector<GammaValue> gamma_grid{GammaValue(0.0), GammaValue(0.25), GammaValue(0.5),
                                     GammaValue(0.75), GammaValue(1.0)};
  std::vector<double> a_grid{0.0, 0.5, 1.0};
  /// Adds the estimated mean engagement mu_h to the a grid.
  bool include_mean_engagement = true;
  TransformSpec transform = TransformSpec::identity();
  IttMethod itt_method = IttMethod::DiffMeans;
  AdjustmentSpec adjustment;
  int bootstrap_reps = 500;
  double ci_level = 0.95;
  std::uint64_t seed = 20210101;

  void validate() const {
    if (gamma_grid.empty()) throw Error(Errc::InvalidConfig, "gamma grid is empty");
    if (a_grid.empty() && !include_mean_engagement) throw Error(Errc::InvalidConfig, "a grid is empty");
    for (double a : a_grid) {
      if (!(a >= 0.0 && a <= 1.0)) throw Error(Errc::InvalidConfig, "a grid value outside [0,1]");
    }
    if (bootstrap_reps != 0 && bootstrap_reps < 2) {
      throw Error(Errc::InvalidConfig, "bootstrap replicates must be >= 2 (or 0 to disable)");
    }
    if (!(ci_level > 0.0 && ci_level < 1.0)) throw Error(Errc::InvalidConfig, "ci level must lie in (0,1)");
    if (itt_method == IttMethod::DiffMeans && !adjustment.empty()) {
      throw Error(Errc::InvalidConfig, "covariate adjustment requires the ols ITT method");
    }
  }
};

}  // namespace late_bounds
