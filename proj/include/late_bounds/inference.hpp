#pragma once

// Delta-method variances, Wald tests and the nonparametric bootstrap.
//
// The plug-in LATE is the product Delta_ITT * c(a). With the two factors
// asymptotically uncorrelated,
//
//   tau^2 = c^2 sigma_ITT^2 + Delta_ITT^2 sigma_c^2,
//   sigma_c^2 = (1-gamma)^2 (gamma + (1-gamma) h(a))^2 / (gamma + (1-gamma) mu_h)^4 * sigma_h^2.

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <utility>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/estimators.hpp"
#include "late_bounds/late.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/parallel.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct VarianceBundle {
  double sigma2_c = 0.0;
  double tau2 = 0.0;
  double se_late = 0.0;
};

struct WaldTest {
  double statistic = 0.0;
  double p_value = 1.0;
  int df = 1;
};

inline double var_c(GammaValue gamma, double h_a, double mu_h, double sigma2_h) {
  const double g = gamma.value();
  const double denom = g + (1.0 - g) * mu_h;
  if (!(denom > 0.0)) throw Error(Errc::ZeroDenominator, "gamma = 0 with mu_h = 0");
  const double num = g + (1.0 - g) * h_a;
  const double d2 = denom * denom;
  return (1.0 - g) * (1.0 - g) * num * num / (d2 * d2) * sigma2_h;
}

inline double var_c(GammaValue gamma, double h_a, const MuHEstimate& mu) {
  return var_c(gamma, h_a, mu.mu_h, mu.sigma2_h);
}

inline VarianceBundle var_late(const IttEstimate& itt, const MuHEstimate& mu, GammaValue gamma, double h_a) {
  const double c = c_factor(gamma, h_a, mu.mu_h);
  VarianceBundle v;
  v.sigma2_c = var_c(gamma, h_a, mu);
  v.tau2 = c * c * itt.sigma2_itt + itt.delta_itt * itt.delta_itt * v.sigma2_c;
  v.se_late = std::sqrt(v.tau2 / static_cast<double>(itt.n_total));
  return v;
}

/// Upper tail of the chi-square distribution with one degree of freedom.
inline double chi2_1_upper_tail(double x) { return x <= 0.0 ? 1.0 : std::erfc(std::sqrt(0.5 * x)); }

/// W = N (estimate / tau)^2 against chi-square(1).
inline WaldTest wald(double estimate, double tau2, std::size_t n) {
  if (!(tau2 > 0.0)) throw Error(Errc::ZeroVariance, "Wald test needs a positive variance");
  WaldTest w;
  w.statistic = static_cast<double>(n) * estimate * estimate / tau2;
  w.p_value = chi2_1_upper_tail(w.statistic);
  return w;
}

// ---------------------------------------------------------------------------
// Bootstrap engine

struct BootstrapOptions {
  std::size_t reps = 500;
  double level = 0.95;
  std::uint64_t seed = 0;
  unsigned workers = 1;
  /// Draw attempts allowed per replicate before giving up.
  std::size_t max_attempts = 100;
  /// Redraws above this fraction of reps abort the bootstrap.
  double max_redraw_rate = 0.10;
};

struct BootstrapResult {
  /// reps x quantities
  Eigen::MatrixXd replicates;
  std::vector<double> ci_lower;
  std::vector<double> ci_upper;
  std::vector<double> se_boot;
  std::uint64_t seed = 0;
  double level = 0.95;
  std::size_t redraws = 0;
};

/// Quantile interval at the given level from the (1-level)/2 and
/// 1-(1-level)/2 linear-interpolation quantiles.
inline std::pair<double, double> quantile_interval(std::span<const double> values, double level) {
  if (!(level > 0.0 && level < 1.0)) throw Error(Errc::InvalidConfig, "ci level must lie in (0,1)");
  std::vector<double> s(values.begin(), values.end());
  std::sort(s.begin(), s.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(s, tail), quantile_sorted(s, 1.0 - tail)};
}

/// Fills CI endpoints and standard errors from result.replicates.
inline void summarize_replicates(BootstrapResult& result) {
  const Eigen::Index q = result.replicates.cols();
  const Eigen::Index b = result.replicates.rows();
  result.ci_lower.assign(static_cast<std::size_t>(q), 0.0);
  result.ci_upper.assign(static_cast<std::size_t>(q), 0.0);
  result.se_boot.assign(static_cast<std::size_t>(q), 0.0);
  std::vector<double> col(static_cast<std::size_t>(b));
  for (Eigen::Index j = 0; j < q; ++j) {
    double mean = 0.0;
    for (Eigen::Index r = 0; r < b; ++r) {
      col[static_cast<std::size_t>(r)] = result.replicates(r, j);
      mean += result.replicates(r, j);
    }
    mean /= static_cast<double>(b);
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const auto [lo, hi] = quantile_interval(col, result.level);
    result.ci_lower[static_cast<std::size_t>(j)] = lo;
    result.ci_upper[static_cast<std::size_t>(j)] = hi;
    result.se_boot[static_cast<std::size_t>(j)] = b > 1 ? std::sqrt(ss / static_cast<double>(b - 1)) : 0.0;
  }
}

namespace detail {

inline bool is_degenerate_resample(Errc c) {
  switch (c) {
    case Errc::EmptyArm:
    case Errc::ZeroInstrument:
    case Errc::DegenerateArm:
    case Errc::RankDeficient:
    case Errc::DegenerateResiduals:
    case Errc::ZeroDenominator:
    case Errc::TooFewDistinct:
      return true;
    default:
      return false;
  }
}

}  // namespace detail

/// Row-level nonparametric bootstrap. `statistic(indices)` maps a resample
/// (indices into the original rows, drawn with replacement) to a vector of
/// quantities, throwing a late_bounds::Error for degenerate resamples; those
/// are redrawn from the same sub-stream and counted.
///
/// Replicate r draws only from substream(seed, Bootstrap, r), so the result
/// is bit-identical for any worker count.
template <class Statistic>
BootstrapResult bootstrap_rows(std::size_t n_rows, const BootstrapOptions& opt, Statistic&& statistic) {
  if (opt.reps < 2) throw Error(Errc::InvalidConfig, "bootstrap needs at least 2 replicates");
  if (n_rows == 0) throw Error(Errc::InvalidConfig, "bootstrap of an empty dataset");

  std::vector<std::vector<double>> rows(opt.reps);
  std::vector<std::size_t> redraws(opt.reps, 0);

  parallel_for(opt.reps, opt.workers, [&](std::size_t r) {
    Engine eng = substream(opt.seed, StreamTag::Bootstrap, r);
    std::uniform_int_distribution<std::size_t> pick(0, n_rows - 1);
    std::vector<std::size_t> idx(n_rows);
    for (std::size_t attempt = 0; attempt < opt.max_attempts; ++attempt) {
      for (auto& i : idx) i = pick(eng);
      try {
        rows[r] = statistic(std::span<const std::size_t>(idx));
        return;
      } catch (const Error& e) {
        if (!detail::is_degenerate_resample(e.code())) throw;
        ++redraws[r];
      }
    }
    throw Error(Errc::TooManyDegenerateResamples,
                "replicate " + std::to_string(r) + " stayed degenerate after " +
                    std::to_string(opt.max_attempts) + " draws");
  });

  BootstrapResult out;
  out.seed = opt.seed;
  out.level = opt.level;
  for (std::size_t c : redraws) out.redraws += c;
  if (static_cast<double>(out.redraws) > opt.max_redraw_rate * static_cast<double>(opt.reps)) {
    throw Error(Errc::TooManyDegenerateResamples,
                std::to_string(out.redraws) + " degenerate resamples in " + std::to_string(opt.reps) +
                    " replicates; instrument too weak for the bootstrap");
  }
  const std::size_t q = rows.front().size();
  out.replicates.resize(static_cast<Eigen::Index>(opt.reps), static_cast<Eigen::Index>(q));
  for (std::size_t r = 0; r < opt.reps; ++r) {
    if (rows[r].size() != q) throw Error(Errc::InvalidConfig, "statistic returned inconsistent sizes");
    for (std::size_t j = 0; j < q; ++j)
      out.replicates(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(j)) = rows[r][j];
  }
  summarize_replicates(out);
  return out;
}

// ---------------------------------------------------------------------------
// Analysis bootstrap

/// Layout of the quantities reported by an analysis:
///   [ delta_itt, mu_h, grid (gamma-major over a values), xi per gamma ]
struct ReportPlan {
  std::vector<double> gammas;
  std::vector<double> a_values;

  static constexpr std::size_t kItt = 0;
  static constexpr std::size_t kMuH = 1;

  std::size_t grid_index(std::size_t gi, std::size_t ai) const { return 2 + gi * a_values.size() + ai; }
  std::size_t xi_index(std::size_t gi) const { return 2 + gammas.size() * a_values.size() + gi; }
  std::size_t size() const { return 2 + gammas.size() * a_values.size() + gammas.size(); }

  std::vector<double> evaluate(double delta_itt, double mu_h, const Transform& h) const {
    std::vector<double> out(size());
    out[kItt] = delta_itt;
    out[kMuH] = mu_h;
    for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
      const GammaValue g(gammas[gi]);
      for (std::size_t ai = 0; ai < a_values.size(); ++ai) {
        const double h_a = h(a_values[ai]);
        out[grid_index(gi, ai)] = (g.value() == 0.0 && h_a == 0.0) ? 0.0 : delta_itt * c_factor(g, h_a, mu_h);
      }
      out[xi_index(gi)] = delta_itt * c_factor(g, 1.0, mu_h) * (1.0 - g.value());
    }
    return out;
  }
};

/// ITT by the configured method; `adjustment` holds the fixed adjustment
/// columns for the rows of `data` (ignored for difference in means).
inline IttEstimate estimate_itt(const TrialDataset& data, IttMethod method, const Eigen::MatrixXd& adjustment) {
  return method == IttMethod::DiffMeans ? itt_diff_means(data) : itt_ols_design(data, adjustment);
}

/// Resamples rows of `data` and recomputes the ITT, mu_h and every plan
/// quantity per replicate. Spline knots are fixed at their full-sample
/// values so every replicate uses the same basis.
inline BootstrapResult bootstrap(const TrialDataset& data, const AnalysisConfig& config, const ReportPlan& plan,
                                 unsigned workers = 1) {
  config.validate();
  const Transform h = validate(config.transform);
  const Eigen::MatrixXd adj = config.itt_method == IttMethod::OlsAdjusted
                                  ? adjustment_design(data, config.adjustment)
                                  : Eigen::MatrixXd(static_cast<Eigen::Index>(data.size()), 0);

  BootstrapOptions opt;
  opt.reps = static_cast<std::size_t>(config.bootstrap_reps);
  opt.level = config.ci_level;
  opt.seed = config.seed;
  opt.workers = workers;

  return bootstrap_rows(data.size(), opt, [&](std::span<const std::size_t> idx) {
    const TrialDataset sample = data.resample(idx);
    Eigen::MatrixXd sample_adj(static_cast<Eigen::Index>(idx.size()), adj.cols());
    for (std::size_t i = 0; i < idx.size(); ++i)
      sample_adj.row(static_cast<Eigen::Index>(i)) = adj.row(static_cast<Eigen::Index>(idx[i]));
    const IttEstimate itt = estimate_itt(sample, config.itt_method, sample_adj);
    const MuHEstimate mu = mu_h_estimate(sample, h);
    return plan.evaluate(itt.delta_itt, mu.mu_h, h);
  });
}

}  // namespace late_bounds
