#pragma once

// Estimators of the identifiable ingredients: the intention-to-treat effect
// (difference in means, or covariate-adjusted least squares with a robust
// sandwich variance) and the mean transformed engagement mu_h in the
// intervention arm.
//
// Variance convention: every variance reported here is the asymptotic
// variance of the sqrt(N)-scaled estimator, N being the total sample size.
// Finite-sample standard errors are sqrt(variance / N).

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct IttEstimate {
  double delta_itt = 0.0;
  double sigma2_itt = 0.0;
  IttMethod method = IttMethod::DiffMeans;
  std::size_t n_total = 0;

  double se() const { return n_total ? std::sqrt(sigma2_itt / static_cast<double>(n_total)) : 0.0; }
};

struct MuHEstimate {
  double mu_h = 0.0;
  double sigma2_h = 0.0;
  std::size_t n1 = 0;
  std::size_t n_total = 0;
};

// ---------------------------------------------------------------------------
// Quantiles

/// Linear-interpolation quantile of sorted data: position (n-1)p between
/// order statistics.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  if (sorted.empty()) throw Error(Errc::InvalidConfig, "quantile of empty sample");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidConfig, "quantile level outside [0,1]");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline double quantile(std::span<const double> x, double p) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  return quantile_sorted(s, p);
}

// ---------------------------------------------------------------------------
// Restricted cubic splines

struct SplineBasis {
  std::vector<double> knots;
  /// n x (k-1): column 0 is x itself, columns 1..k-2 are the nonlinear terms.
  Eigen::MatrixXd columns;
};

/// Inner quartiles (0.25, 0.50, 0.75) of x.
inline std::array<double, 3> quartile_knots(std::span<const double> x) {
  std::vector<double> s(x.begin(), x.end());
  std::sort(s.begin(), s.end());
  std::size_t n_distinct = s.empty() ? 0 : 1;
  for (std::size_t i = 1; i < s.size(); ++i)
    if (s[i] != s[i - 1]) ++n_distinct;
  if (n_distinct < 4) {
    throw Error(Errc::TooFewDistinct, "need at least 4 distinct values for quartile knots, got " +
                                          std::to_string(n_distinct));
  }
  return {quantile_sorted(s, 0.25), quantile_sorted(s, 0.50), quantile_sorted(s, 0.75)};
}

/// Restricted (natural) cubic spline basis in truncated-power form, linear
/// beyond the boundary knots. Nonlinear term j (j = 0..k-3):
///   [ (x-t_j)^3_+ - (x-t_{k-2})^3_+ (t_{k-1}-t_j)/(t_{k-1}-t_{k-2})
///                 + (x-t_{k-1})^3_+ (t_{k-2}-t_j)/(t_{k-1}-t_{k-2}) ] / (t_{k-1}-t_0)^2
inline SplineBasis rcs_basis(std::span<const double> x, std::span<const double> knots) {
  const std::size_t k = knots.size();
  if (k < 3) throw Error(Errc::KnotsNotAscending, "restricted cubic spline needs at least 3 knots");
  for (std::size_t j = 1; j < k; ++j) {
    if (!(knots[j] > knots[j - 1])) throw Error(Errc::KnotsNotAscending, "knots must be strictly ascending");
  }
  const double t_last = knots[k - 1];
  const double t_penult = knots[k - 2];
  const double span2 = (t_last - knots[0]) * (t_last - knots[0]);
  const auto cube_plus = [](double v) { return v > 0.0 ? v * v * v : 0.0; };

  SplineBasis out;
  out.knots.assign(knots.begin(), knots.end());
  out.columns.resize(static_cast<Eigen::Index>(x.size()), static_cast<Eigen::Index>(k - 1));
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double xi = x[i];
    const auto row = static_cast<Eigen::Index>(i);
    out.columns(row, 0) = xi;
    const double tail_penult = cube_plus(xi - t_penult);
    const double tail_last = cube_plus(xi - t_last);
    for (std::size_t j = 0; j + 2 < k; ++j) {
      const double tj = knots[j];
      const double term = cube_plus(xi - tj) - tail_penult * (t_last - tj) / (t_last - t_penult) +
                          tail_last * (t_penult - tj) / (t_last - t_penult);
      out.columns(row, static_cast<Eigen::Index>(j + 1)) = term / span2;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Least squares with HC1 sandwich covariance

struct OlsFit {
  Eigen::VectorXd coef;
  Eigen::VectorXd residuals;
  /// Heteroskedasticity-robust covariance of coef with factor N/(N-p).
  Eigen::MatrixXd cov_hc1;
};

/// Relative pivot threshold for rank detection.
inline constexpr double kRankTolerance = 1e-10;

inline OlsFit ols_hc1(const Eigen::MatrixXd& X, const Eigen::VectorXd& y) {
  const Eigen::Index n = X.rows();
  const Eigen::Index p = X.cols();
  if (n <= p) {
    throw Error(Errc::DegenerateResiduals, "design has " + std::to_string(p) + " columns but only " +
                                               std::to_string(n) + " rows");
  }
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(X);
  qr.setThreshold(kRankTolerance);
  if (qr.rank() < p) {
    throw Error(Errc::RankDeficient, "design matrix has rank " + std::to_string(qr.rank()) + " < " +
                                         std::to_string(p) + " columns");
  }
  OlsFit fit;
  fit.coef = qr.solve(y);
  fit.residuals = y - X * fit.coef;

  // (X'X)^{-1} = P R^{-1} R^{-T} P'
  const Eigen::MatrixXd R = qr.matrixR().topLeftCorner(p, p).triangularView<Eigen::Upper>();
  const Eigen::MatrixXd Rinv =
      R.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(p, p));
  const Eigen::MatrixXd perm = qr.colsPermutation();
  const Eigen::MatrixXd bread = perm * Rinv * Rinv.transpose() * perm.transpose();
  const Eigen::MatrixXd meat = X.transpose() * fit.residuals.array().square().matrix().asDiagonal() * X;
  const double hc1 = static_cast<double>(n) / static_cast<double>(n - p);
  fit.cov_hc1 = hc1 * bread * meat * bread;
  return fit;
}

// ---------------------------------------------------------------------------
// ITT estimators

inline IttEstimate itt_diff_means(const TrialDataset& data) {
  double sum[2] = {0.0, 0.0};
  std::size_t cnt[2] = {0, 0};
  for (const auto& r : data.rows()) {
    sum[r.z] += r.y;
    ++cnt[r.z];
  }
  if (cnt[0] < 2 || cnt[1] < 2) {
    throw Error(Errc::DegenerateArm, "each arm needs at least 2 rows for a variance (have " +
                                         std::to_string(cnt[0]) + ", " + std::to_string(cnt[1]) + ")");
  }
  const double mean[2] = {sum[0] / static_cast<double>(cnt[0]), sum[1] / static_cast<double>(cnt[1])};
  double ss[2] = {0.0, 0.0};
  for (const auto& r : data.rows()) ss[r.z] += (r.y - mean[r.z]) * (r.y - mean[r.z]);
  const double s2_0 = ss[0] / static_cast<double>(cnt[0] - 1);
  const double s2_1 = ss[1] / static_cast<double>(cnt[1] - 1);
  const auto n = static_cast<double>(data.size());

  IttEstimate est;
  est.delta_itt = mean[1] - mean[0];
  est.sigma2_itt = n * (s2_1 / static_cast<double>(cnt[1]) + s2_0 / static_cast<double>(cnt[0]));
  est.method = IttMethod::DiffMeans;
  est.n_total = data.size();
  return est;
}

/// Adjustment columns f(l) for every row of `data`. Spline terms with no
/// knots use the inner quartiles of that covariate.
inline Eigen::MatrixXd adjustment_design(const TrialDataset& data, const AdjustmentSpec& adj) {
  const auto n = static_cast<Eigen::Index>(data.size());
  const auto column_of = [&](const std::string& name) {
    const auto idx = data.covariate_index(name);
    if (!idx) throw Error(Errc::InvalidConfig, "unknown adjustment covariate '" + name + "'");
    std::vector<double> col;
    col.reserve(data.size());
    for (const auto& r : data.rows()) col.push_back(r.covariates[*idx]);
    return col;
  };

  std::vector<Eigen::VectorXd> cols;
  for (const auto& name : adj.linear) {
    const auto v = column_of(name);
    cols.emplace_back(Eigen::Map<const Eigen::VectorXd>(v.data(), n));
  }
  for (const auto& term : adj.splines) {
    const auto v = column_of(term.column);
    std::vector<double> knots = term.knots;
    if (knots.empty()) {
      const auto q = quartile_knots(v);
      knots.assign(q.begin(), q.end());
    }
    const SplineBasis basis = rcs_basis(v, knots);
    for (Eigen::Index j = 0; j < basis.columns.cols(); ++j) cols.emplace_back(basis.columns.col(j));
  }
  Eigen::MatrixXd out(n, static_cast<Eigen::Index>(cols.size()));
  for (std::size_t j = 0; j < cols.size(); ++j) out.col(static_cast<Eigen::Index>(j)) = cols[j];
  return out;
}

/// ITT as the arm coefficient of y ~ 1 + z + adjustment, with HC1 variance.
inline IttEstimate itt_ols_design(const TrialDataset& data, const Eigen::MatrixXd& adjustment) {
  const auto n = static_cast<Eigen::Index>(data.size());
  if (adjustment.rows() != n) throw Error(Errc::InvalidConfig, "adjustment design has wrong row count");
  Eigen::MatrixXd X(n, 2 + adjustment.cols());
  Eigen::VectorXd y(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& r = data.rows()[static_cast<std::size_t>(i)];
    X(i, 0) = 1.0;
    X(i, 1) = static_cast<double>(r.z);
    y(i) = r.y;
  }
  X.rightCols(adjustment.cols()) = adjustment;
  const OlsFit fit = ols_hc1(X, y);

  IttEstimate est;
  est.delta_itt = fit.coef(1);
  est.sigma2_itt = static_cast<double>(n) * fit.cov_hc1(1, 1);
  est.method = IttMethod::OlsAdjusted;
  est.n_total = data.size();
  return est;
}

inline IttEstimate itt_ols(const TrialDataset& data, const AdjustmentSpec& adjustment) {
  return itt_ols_design(data, adjustment_design(data, adjustment));
}

// ---------------------------------------------------------------------------
// Instrument strength

inline MuHEstimate mu_h_estimate(const TrialDataset& data, const Transform& h) {
  std::vector<double> values;
  values.reserve(data.n_treated());
  for (const auto& r : data.rows())
    if (r.z == 1) values.push_back(h(r.a));
  if (values.size() < 2) throw Error(Errc::DegenerateArm, "intervention arm needs at least 2 rows");

  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (mean <= 0.0) {
    throw Error(Errc::ZeroInstrument, "mean transformed engagement is 0 under " + h.spec().describe());
  }
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  const double s2 = ss / static_cast<double>(values.size() - 1);

  MuHEstimate est;
  est.mu_h = mean;
  est.n1 = values.size();
  est.n_total = data.size();
  est.sigma2_h = static_cast<double>(data.size()) / static_cast<double>(values.size()) * s2;
  return est;
}

}  // namespace late_bounds
