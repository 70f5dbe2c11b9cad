#pragma once

// Simulation of two-arm trials with semi-continuous engagement and an
// unmeasured confounder U, plus closed-form oracles and a Monte Carlo
// harness.
//
// Per subject:
//   U, L ~ N(0,1);  Z ~ Bernoulli(p_z)
//   A1 = 1                      w.p. expit(alpha01 + alpha11 U)
//      = 0                      else w.p. expit(alpha00 + alpha10 U)
//      = expit(N(alpha0 + alpha1 U, sigma_a^2))   otherwise
//   A  = Z * A1
//   Y ~ N(beta0 + beta1 Z + beta2 A + beta3 U + beta4 L, sigma_y^2)
//
// so Delta(a) = beta1 + beta2 a, the never-engager effect is beta1 and the
// engagement-compliant effect beta1 + beta2.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <istream>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/estimators.hpp"
#include "late_bounds/inference.hpp"
#include "late_bounds/late.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/parallel.hpp"

namespace late_bounds {

inline double expit(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct ScenarioSpec {
  std::size_t n = 250;
  double alpha01 = -2.0;
  double alpha11 = 1.0;
  double alpha00 = -2.0;
  double alpha10 = -1.0;
  double alpha0 = -0.05;
  double alpha1 = 0.8;
  double sigma_a = 0.2;
  double beta0 = 9.0;
  double beta1 = -0.4;
  double beta2 = -0.4;
  double beta3 = 0.2;
  double beta4 = 0.3;
  double sigma_y = 0.8;
  double p_z = 0.5;

  /// Fixed nuisance values with the given instrument location, never-engager
  /// effect beta1 and an engagement-compliant effect of -0.8.
  static ScenarioSpec standard(double alpha0, double beta1, std::size_t n) {
    ScenarioSpec s;
    s.alpha0 = alpha0;
    s.beta1 = beta1;
    s.beta2 = -(0.8 + beta1);
    s.n = n;
    return s;
  }

  void validate() const {
    if (n < 4) throw Error(Errc::InvalidScenario, "n must be at least 4");
    if (!(sigma_a > 0.0)) throw Error(Errc::InvalidScenario, "sigma_a must be positive");
    if (!(sigma_y >= 0.0)) throw Error(Errc::InvalidScenario, "sigma_y must be non-negative");
    if (!(p_z > 0.0 && p_z < 1.0)) throw Error(Errc::InvalidScenario, "p_z must lie in (0,1)");
    for (double v : {alpha01, alpha11, alpha00, alpha10, alpha0, alpha1, beta0, beta1, beta2, beta3, beta4}) {
      if (!std::isfinite(v)) throw Error(Errc::InvalidScenario, "non-finite scenario coefficient");
    }
  }

  friend bool operator==(const ScenarioSpec&, const ScenarioSpec&) = default;
};

struct LatentRow {
  double u = 0.0;
  double l = 0.0;
  double a_pot = 0.0;
  int z = 0;
  double a = 0.0;
  double y = 0.0;
};

/// Observed dataset (covariate "l") plus the oracle-only latent rows.
struct SimulatedTrial {
  TrialDataset data;
  std::vector<LatentRow> latent;
};

/// Draws one potential engagement A^{z=1} given U.
inline double draw_engagement(const ScenarioSpec& s, double u, Engine& eng) {
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  if (unif(eng) < expit(s.alpha01 + s.alpha11 * u)) return 1.0;
  if (unif(eng) < expit(s.alpha00 + s.alpha10 * u)) return 0.0;
  std::normal_distribution<double> logit_a(s.alpha0 + s.alpha1 * u, s.sigma_a);
  return expit(logit_a(eng));
}

inline SimulatedTrial gen_dataset(const ScenarioSpec& s, std::uint64_t seed) {
  s.validate();
  Engine eng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  std::vector<RawRow> raw;
  std::vector<LatentRow> latent;
  raw.reserve(s.n);
  latent.reserve(s.n);
  for (std::size_t i = 0; i < s.n; ++i) {
    LatentRow r;
    r.u = std_normal(eng);
    r.l = std_normal(eng);
    r.z = unif(eng) < s.p_z ? 1 : 0;
    r.a_pot = draw_engagement(s, r.u, eng);
    r.a = r.z == 1 ? r.a_pot : 0.0;
    const double noise = s.sigma_y > 0.0 ? s.sigma_y * std_normal(eng) : 0.0;
    r.y = s.beta0 + s.beta1 * r.z + s.beta2 * r.a + s.beta3 * r.u + s.beta4 * r.l + noise;
    raw.push_back({static_cast<double>(r.z), r.a, r.y, {r.l}});
    latent.push_back(r);
  }
  return {validate_dataset(raw, {"l"}), std::move(latent)};
}

/// gamma_0 = beta1 / (beta1 + beta2); 0 by convention when both are 0.
inline double true_gamma(double beta1, double beta2) {
  const double ecce = beta1 + beta2;
  if (beta1 == 0.0) return 0.0;
  if (ecce == 0.0) throw Error(Errc::NullEcce, "engagement-compliant effect is zero while beta1 != 0");
  const double g = beta1 / ecce;
  if (g < 0.0 || g > 1.0) {
    throw Error(Errc::InvalidScenario, "beta1 / (beta1 + beta2) = " + std::to_string(g) + " outside [0,1]");
  }
  return g;
}

/// E[A^{z=1}] by nested adaptive Gauss-Kronrod quadrature over U and over
/// the logit-normal interior.
inline double true_mu_a(const ScenarioSpec& s) {
  using boost::math::quadrature::gauss_kronrod;
  constexpr double kInf = std::numeric_limits<double>::infinity();
  constexpr double kTol = 1e-10;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * M_PI);
  const auto phi = [&](double x) { return inv_sqrt_2pi * std::exp(-0.5 * x * x); };

  const auto conditional_mean = [&](double u) {
    const double p_one = expit(s.alpha01 + s.alpha11 * u);
    const double p_zero = expit(s.alpha00 + s.alpha10 * u);
    const double loc = s.alpha0 + s.alpha1 * u;
    const double interior = gauss_kronrod<double, 31>::integrate(
        [&](double x) { return expit(loc + s.sigma_a * x) * phi(x); }, -kInf, kInf, 15, kTol);
    return p_one + (1.0 - p_one) * (1.0 - p_zero) * interior;
  };
  return gauss_kronrod<double, 31>::integrate([&](double u) { return conditional_mean(u) * phi(u); }, -kInf,
                                              kInf, 15, kTol);
}

/// True Delta(a) = beta1 + beta2 a.
inline double true_effect(const ScenarioSpec& s, double a) { return s.beta1 + s.beta2 * a; }

/// True ITT = beta1 + beta2 mu_A.
inline double true_itt(const ScenarioSpec& s, double mu_a) { return s.beta1 + s.beta2 * mu_a; }

// ---------------------------------------------------------------------------
// Monte Carlo

struct McQuantity {
  std::string label;
  double gamma = 0.0;  ///< specified gamma (NaN for the ITT row)
  double a = 0.0;      ///< engagement level (NaN for the ITT row)
  double truth = 0.0;  ///< true Delta(a) (or true ITT)
  double target = 0.0; ///< probability limit under the specified gamma
  double mean = 0.0;
  double ese = 0.0;
  double mean_se_lst = 0.0;
  double mean_se_boot = std::numeric_limits<double>::quiet_NaN();
};

struct McSummary {
  ScenarioSpec spec;
  std::size_t k = 0;
  std::size_t b = 0;
  std::uint64_t seed = 0;
  double true_mu_a = 0.0;
  double true_gamma = 0.0;
  double true_itt = 0.0;
  std::vector<McQuantity> quantities;
};

struct McOptions {
  std::vector<double> gammas;
  std::vector<double> a_grid{0.0, 1.0};
  std::size_t k = 200;
  std::size_t b = 200;
  std::uint64_t seed = 17;
  unsigned workers = 1;
};

namespace detail {

struct McIteration {
  std::vector<double> estimate;
  std::vector<double> se_lst;
  std::vector<double> se_boot;
};

}  // namespace detail

/// Repeats gen_dataset K times. Each iteration estimates the ITT by least
/// squares adjusting linearly for L, mu_A by the treated-arm mean
/// engagement (identity transform) and every (gamma, a) effect with
/// large-sample and (when B > 0) bootstrap standard errors.
inline McSummary monte_carlo(const ScenarioSpec& spec, const McOptions& opt) {
  spec.validate();
  if (opt.k < 2) throw Error(Errc::InvalidConfig, "Monte Carlo needs K >= 2");
  if (opt.b == 1) throw Error(Errc::InvalidConfig, "bootstrap needs B >= 2 (or 0 to skip)");
  if (opt.gammas.empty()) throw Error(Errc::InvalidConfig, "no gamma values to evaluate");
  for (double g : opt.gammas) (void)GammaValue(g);
  for (double a : opt.a_grid)
    if (!(a >= 0.0 && a <= 1.0)) throw Error(Errc::InvalidConfig, "a grid value outside [0,1]");

  const Transform identity = validate(TransformSpec::identity());
  ReportPlan plan{opt.gammas, opt.a_grid};
  const std::size_t n_cells = opt.gammas.size() * opt.a_grid.size();
  const std::size_t n_q = 1 + n_cells;  // ITT + grid

  std::vector<detail::McIteration> iters(opt.k);
  parallel_for(opt.k, opt.workers, [&](std::size_t it) {
    try {
      const SimulatedTrial sim = gen_dataset(spec, substream_seed(opt.seed, StreamTag::SimulateData, it));
      const Eigen::MatrixXd adj = adjustment_design(sim.data, AdjustmentSpec{{"l"}, {}});
      const IttEstimate itt = itt_ols_design(sim.data, adj);
      const MuHEstimate mu = mu_h_estimate(sim.data, identity);

      detail::McIteration out;
      out.estimate.reserve(n_q);
      out.se_lst.reserve(n_q);
      out.estimate.push_back(itt.delta_itt);
      out.se_lst.push_back(itt.se());
      for (double g : opt.gammas) {
        for (double a : opt.a_grid) {
          const LatePoint p = late_estimate(itt, mu, GammaValue(g), identity, a);
          out.estimate.push_back(p.delta);
          out.se_lst.push_back(p.convention ? 0.0 : var_late(itt, mu, GammaValue(g), p.h_a).se_late);
        }
      }
      if (opt.b > 0) {
        BootstrapOptions bo;
        bo.reps = opt.b;
        bo.seed = substream_seed(opt.seed, StreamTag::SimulateBootstrap, it);
        const BootstrapResult br = bootstrap_rows(sim.data.size(), bo, [&](std::span<const std::size_t> idx) {
          const TrialDataset sample = sim.data.resample(idx);
          Eigen::MatrixXd sample_adj(static_cast<Eigen::Index>(idx.size()), 1);
          for (std::size_t i = 0; i < idx.size(); ++i)
            sample_adj(static_cast<Eigen::Index>(i), 0) = adj(static_cast<Eigen::Index>(idx[i]), 0);
          const IttEstimate bi = itt_ols_design(sample, sample_adj);
          const MuHEstimate bm = mu_h_estimate(sample, identity);
          return plan.evaluate(bi.delta_itt, bm.mu_h, identity);
        });
        out.se_boot.push_back(br.se_boot[ReportPlan::kItt]);
        for (std::size_t gi = 0; gi < opt.gammas.size(); ++gi)
          for (std::size_t ai = 0; ai < opt.a_grid.size(); ++ai)
            out.se_boot.push_back(br.se_boot[plan.grid_index(gi, ai)]);
      }
      iters[it] = std::move(out);
    } catch (const Error& e) {
      throw Error(e.code(), "Monte Carlo iteration " + std::to_string(it) + ": " + e.message());
    }
  });

  McSummary sum;
  sum.spec = spec;
  sum.k = opt.k;
  sum.b = opt.b;
  sum.seed = opt.seed;
  sum.true_mu_a = true_mu_a(spec);
  sum.true_gamma = true_gamma(spec.beta1, spec.beta2);
  sum.true_itt = true_itt(spec, sum.true_mu_a);

  const double nan = std::numeric_limits<double>::quiet_NaN();
  sum.quantities.push_back({"itt", nan, nan, sum.true_itt, sum.true_itt});
  for (double g : opt.gammas) {
    for (double a : opt.a_grid) {
      McQuantity q;
      std::ostringstream label;
      label << "delta[gamma=" << g << ",a=" << a << "]";
      q.label = label.str();
      q.gamma = g;
      q.a = a;
      q.truth = true_effect(spec, a);
      const bool conv = g == 0.0 && a == 0.0;
      q.target = conv ? 0.0 : sum.true_itt * c_factor(GammaValue(g), a, sum.true_mu_a);
      sum.quantities.push_back(q);
    }
  }

  const auto kd = static_cast<double>(opt.k);
  for (std::size_t j = 0; j < n_q; ++j) {
    double mean = 0.0, se_lst = 0.0, se_boot = 0.0;
    for (const auto& it : iters) {
      mean += it.estimate[j];
      se_lst += it.se_lst[j];
      if (opt.b > 0) se_boot += it.se_boot[j];
    }
    mean /= kd;
    double ss = 0.0;
    for (const auto& it : iters) ss += (it.estimate[j] - mean) * (it.estimate[j] - mean);
    McQuantity& q = sum.quantities[j];
    q.mean = mean;
    q.ese = std::sqrt(ss / (kd - 1.0));
    q.mean_se_lst = se_lst / kd;
    if (opt.b > 0) q.mean_se_boot = se_boot / kd;
  }
  return sum;
}

/// Mean point estimates over (specified gamma x a grid), no bootstrap.
struct MisspecificationSweep {
  std::vector<double> gammas;
  std::vector<double> a_grid;
  Eigen::MatrixXd mean;       ///< gammas x a_grid
  Eigen::MatrixXd mc_se;      ///< Monte Carlo SE of each mean (ESE / sqrt(K))
  double true_itt = 0.0;
  double true_gamma = 0.0;
  double true_mu_a = 0.0;
};

inline MisspecificationSweep misspecification_sweep(const ScenarioSpec& spec, std::vector<double> gammas,
                                                    std::vector<double> a_grid, std::size_t k,
                                                    std::uint64_t seed, unsigned workers = 1) {
  McOptions opt;
  opt.gammas = std::move(gammas);
  opt.a_grid = std::move(a_grid);
  opt.k = k;
  opt.b = 0;
  opt.seed = seed;
  opt.workers = workers;
  const McSummary mc = monte_carlo(spec, opt);

  MisspecificationSweep out;
  out.gammas = opt.gammas;
  out.a_grid = opt.a_grid;
  out.true_itt = mc.true_itt;
  out.true_gamma = mc.true_gamma;
  out.true_mu_a = mc.true_mu_a;
  const auto ng = static_cast<Eigen::Index>(opt.gammas.size());
  const auto na = static_cast<Eigen::Index>(opt.a_grid.size());
  out.mean.resize(ng, na);
  out.mc_se.resize(ng, na);
  for (Eigen::Index gi = 0; gi < ng; ++gi) {
    for (Eigen::Index ai = 0; ai < na; ++ai) {
      const McQuantity& q = mc.quantities[static_cast<std::size_t>(1 + gi * na + ai)];
      out.mean(gi, ai) = q.mean;
      out.mc_se(gi, ai) = q.ese / std::sqrt(static_cast<double>(k));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Scenario files: `name = value` lines, `#` comments.

struct ScenarioFile {
  std::string name;
  ScenarioSpec spec;
  std::vector<double> gammas;  ///< defaults to the true gamma
  std::vector<double> a_grid{0.0, 1.0};
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<double> parse_number_list(const std::string& text, const std::string& where) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument("trailing");
    } catch (const std::logic_error&) {
      throw Error(Errc::ParseError, where + ": not a number: '" + item + "'");
    }
  }
  if (out.empty()) throw Error(Errc::ParseError, where + ": empty list");
  return out;
}

}  // namespace detail

/// Every DGP coefficient must be present; `p_z`, `gamma`, `a_grid` and `name`
/// are optional.
inline ScenarioFile parse_scenario(std::istream& in, const std::string& source = "scenario") {
  ScenarioFile out;
  std::map<std::string, double*> scalar{
      {"alpha01", &out.spec.alpha01}, {"alpha11", &out.spec.alpha11}, {"alpha00", &out.spec.alpha00},
      {"alpha10", &out.spec.alpha10}, {"alpha0", &out.spec.alpha0},   {"alpha1", &out.spec.alpha1},
      {"sigma_a", &out.spec.sigma_a}, {"beta0", &out.spec.beta0},     {"beta1", &out.spec.beta1},
      {"beta2", &out.spec.beta2},     {"beta3", &out.spec.beta3},     {"beta4", &out.spec.beta4},
      {"sigma_y", &out.spec.sigma_y}, {"p_z", &out.spec.p_z}};
  const std::set<std::string> optional_keys{"p_z", "gamma", "a_grid", "name"};
  std::set<std::string> seen;

  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string where = source + ":" + std::to_string(lineno);
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(Errc::ParseError, where + ": expected 'name = value'");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (!seen.insert(key).second) throw Error(Errc::ParseError, where + ": duplicate key '" + key + "'");

    if (key == "name") {
      out.name = value;
    } else if (key == "gamma") {
      out.gammas = detail::parse_number_list(value, where);
    } else if (key == "a_grid") {
      out.a_grid = detail::parse_number_list(value, where);
    } else if (key == "n") {
      const auto v = detail::parse_number_list(value, where);
      if (v.size() != 1 || v[0] < 1 || v[0] != std::floor(v[0])) {
        throw Error(Errc::ParseError, where + ": n must be a positive integer");
      }
      out.spec.n = static_cast<std::size_t>(v[0]);
    } else if (auto it = scalar.find(key); it != scalar.end()) {
      const auto v = detail::parse_number_list(value, where);
      if (v.size() != 1) throw Error(Errc::ParseError, where + ": '" + key + "' takes one value");
      *it->second = v[0];
    } else {
      throw Error(Errc::ParseError, where + ": unknown key '" + key + "'");
    }
  }

  std::vector<std::string> required{"n"};
  for (const auto& [k, _] : scalar) required.push_back(k);
  for (const auto& k : required) {
    if (!optional_keys.count(k) && !seen.count(k)) {
      throw Error(Errc::ParseError, source + ": missing required key '" + k + "'");
    }
  }
  out.spec.validate();
  if (out.gammas.empty()) out.gammas = {true_gamma(out.spec.beta1, out.spec.beta2)};
  return out;
}

}  // namespace late_bounds
