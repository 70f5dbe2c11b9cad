#pragma once

// Analysis reports: the full estimate grid over (gamma, a) with delta-method
// standard errors, Wald tests, bootstrap intervals, the heterogeneity table
// and optional threshold searches. Serializes to JSON (lossless for every
// number) and to an aligned text table.

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <iomanip>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/estimators.hpp"
#include "late_bounds/inference.hpp"
#include "late_bounds/late.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  friend bool operator==(const Interval&, const Interval&) = default;
};

struct GridCell {
  LatePoint point;
  VarianceBundle variance;
  std::optional<WaldTest> wald;  ///< absent where the variance is zero
  std::optional<Interval> ci;
  std::optional<double> se_boot;
};

struct XiRow {
  XiResult xi;
  double se = 0.0;  ///< delta method: (1 - gamma) * se of Delta(1)
  std::optional<Interval> ci;
};

struct EngagementSolution {
  double gamma = 0.0;
  EngagementThreshold solution;
};

struct ThresholdResults {
  std::optional<double> xi_threshold;
  std::optional<double> gamma_star;  ///< set only when a solution exists
  std::optional<double> effect_threshold;
  std::vector<EngagementSolution> engagement;
};

struct ThresholdRequest {
  std::optional<double> xi_threshold;
  std::optional<double> effect_threshold;
};

struct ReportMetadata {
  std::uint64_t seed = 0;
  int bootstrap_reps = 0;
  double ci_level = 0.95;
  std::string transform;
  std::string itt_method;
  std::vector<std::string> adjustment;
  std::size_t degenerate_redraws = 0;
  std::string source;
  std::string input_digest;
  std::string created_utc;
};

struct AnalysisReport {
  IttEstimate itt;
  std::optional<WaldTest> itt_wald;
  std::optional<Interval> itt_ci;
  MuHEstimate mu;
  std::optional<Interval> mu_ci;
  std::vector<double> gammas;
  std::vector<double> a_values;
  std::vector<GridCell> grid;  ///< gamma-major
  std::vector<XiRow> xi_table;
  ThresholdResults thresholds;
  ReportMetadata metadata;

  const GridCell& cell(std::size_t gi, std::size_t ai) const { return grid.at(gi * a_values.size() + ai); }
};

inline const char* itt_method_name(IttMethod m) { return m == IttMethod::DiffMeans ? "diff" : "ols"; }

/// The a grid actually reported: configured values plus mu_h when requested,
/// sorted and de-duplicated.
inline std::vector<double> resolve_a_grid(const AnalysisConfig& config, double mu_h) {
  std::vector<double> a = config.a_grid;
  if (config.include_mean_engagement) a.push_back(mu_h);
  std::sort(a.begin(), a.end());
  a.erase(std::unique(a.begin(), a.end()), a.end());
  return a;
}

/// Assembles a report from point estimates and (optionally) a bootstrap over
/// the same plan.
inline AnalysisReport build_report(const IttEstimate& itt, const MuHEstimate& mu, const AnalysisConfig& config,
                                   const ReportPlan& plan, const std::optional<BootstrapResult>& boot,
                                   const ThresholdRequest& request = {}) {
  const Transform h = validate(config.transform);
  AnalysisReport rep;
  rep.itt = itt;
  rep.mu = mu;
  rep.gammas = plan.gammas;
  rep.a_values = plan.a_values;
  if (itt.sigma2_itt > 0.0) rep.itt_wald = wald(itt.delta_itt, itt.sigma2_itt, itt.n_total);

  const auto ci_of = [&](std::size_t q) -> std::optional<Interval> {
    if (!boot) return std::nullopt;
    return Interval{boot->ci_lower[q], boot->ci_upper[q]};
  };
  rep.itt_ci = ci_of(ReportPlan::kItt);
  rep.mu_ci = ci_of(ReportPlan::kMuH);

  for (std::size_t gi = 0; gi < plan.gammas.size(); ++gi) {
    const GammaValue g(plan.gammas[gi]);
    for (std::size_t ai = 0; ai < plan.a_values.size(); ++ai) {
      GridCell cell;
      cell.point = late_estimate(itt, mu, g, h, plan.a_values[ai]);
      cell.variance = var_late(itt, mu, g, cell.point.h_a);
      if (cell.point.convention) cell.variance = VarianceBundle{};
      if (cell.variance.tau2 > 0.0) cell.wald = wald(cell.point.delta, cell.variance.tau2, itt.n_total);
      const std::size_t q = plan.grid_index(gi, ai);
      cell.ci = ci_of(q);
      if (boot) cell.se_boot = boot->se_boot[q];
      rep.grid.push_back(cell);
    }
    XiRow row;
    row.xi = xi(itt, mu, g);
    row.se = (1.0 - g.value()) * var_late(itt, mu, g, 1.0).se_late;
    row.ci = ci_of(plan.xi_index(gi));
    rep.xi_table.push_back(row);
  }

  if (request.xi_threshold) {
    rep.thresholds.xi_threshold = request.xi_threshold;
    if (const auto gs = gamma_for_xi_threshold(itt, mu, *request.xi_threshold)) rep.thresholds.gamma_star = gs->value();
  }
  if (request.effect_threshold) {
    rep.thresholds.effect_threshold = request.effect_threshold;
    for (double g : plan.gammas) {
      rep.thresholds.engagement.push_back(
          {g, engagement_for_effect_threshold(itt, mu, GammaValue(g), h, *request.effect_threshold)});
    }
  }

  rep.metadata.seed = config.seed;
  rep.metadata.bootstrap_reps = boot ? config.bootstrap_reps : 0;
  rep.metadata.ci_level = config.ci_level;
  rep.metadata.transform = config.transform.describe();
  rep.metadata.itt_method = itt_method_name(itt.method);
  rep.metadata.adjustment = config.adjustment.linear;
  for (const auto& s : config.adjustment.splines) rep.metadata.adjustment.push_back("rcs(" + s.column + ")");
  if (boot) rep.metadata.degenerate_redraws = boot->redraws;
  return rep;
}

/// Full pipeline on a dataset: ITT, mu_h, grid, bootstrap (when B > 0).
inline AnalysisReport analyze(const TrialDataset& data, const AnalysisConfig& config,
                              const ThresholdRequest& request = {}, unsigned workers = 1) {
  config.validate();
  const Transform h = validate(config.transform);
  const IttEstimate itt = config.itt_method == IttMethod::DiffMeans ? itt_diff_means(data)
                                                                    : itt_ols(data, config.adjustment);
  const MuHEstimate mu = mu_h_estimate(data, h);

  ReportPlan plan;
  for (const auto& g : config.gamma_grid) plan.gammas.push_back(g.value());
  plan.a_values = resolve_a_grid(config, mu.mu_h);

  std::optional<BootstrapResult> boot;
  if (config.bootstrap_reps > 0) boot = bootstrap(data, config, plan, workers);
  return build_report(itt, mu, config, plan, boot, request);
}

// ---------------------------------------------------------------------------
// JSON

namespace detail {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> opt_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<T>();
}

inline const char* status_name(EngagementThreshold::Status s) {
  switch (s) {
    case EngagementThreshold::Status::Solved: return "solved";
    case EngagementThreshold::Status::AllExceed: return "all_exceed";
    case EngagementThreshold::Status::NoneReach: return "none_reach";
    case EngagementThreshold::Status::NonUnique: return "non_unique";
  }
  return "unknown";
}

inline EngagementThreshold::Status status_from(const std::string& s) {
  if (s == "solved") return EngagementThreshold::Status::Solved;
  if (s == "all_exceed") return EngagementThreshold::Status::AllExceed;
  if (s == "none_reach") return EngagementThreshold::Status::NoneReach;
  if (s == "non_unique") return EngagementThreshold::Status::NonUnique;
  throw Error(Errc::ParseError, "unknown threshold status '" + s + "'");
}

}  // namespace detail

inline void to_json(nlohmann::json& j, const Interval& v) { j = nlohmann::json::array({v.lower, v.upper}); }
inline void from_json(const nlohmann::json& j, Interval& v) {
  v.lower = j.at(0).get<double>();
  v.upper = j.at(1).get<double>();
}

inline void to_json(nlohmann::json& j, const WaldTest& w) {
  j = {{"statistic", w.statistic}, {"p_value", w.p_value}, {"df", w.df}};
}
inline void from_json(const nlohmann::json& j, WaldTest& w) {
  w.statistic = j.at("statistic").get<double>();
  w.p_value = j.at("p_value").get<double>();
  w.df = j.at("df").get<int>();
}

inline nlohmann::json report_to_json(const AnalysisReport& r) {
  using nlohmann::json;
  json j;
  j["itt"] = {{"estimate", r.itt.delta_itt},
              {"sigma2", r.itt.sigma2_itt},
              {"se", r.itt.se()},
              {"method", itt_method_name(r.itt.method)},
              {"n", r.itt.n_total},
              {"wald", detail::opt_json(r.itt_wald)},
              {"ci", detail::opt_json(r.itt_ci)}};
  j["mu_h"] = {{"estimate", r.mu.mu_h},
               {"sigma2", r.mu.sigma2_h},
               {"n1", r.mu.n1},
               {"n", r.mu.n_total},
               {"ci", detail::opt_json(r.mu_ci)}};
  j["gammas"] = r.gammas;
  j["a_values"] = r.a_values;
  json grid = json::array();
  for (const auto& c : r.grid) {
    grid.push_back({{"gamma", c.point.gamma},
                    {"a", c.point.a},
                    {"h_a", c.point.h_a},
                    {"c_factor", c.point.c_factor},
                    {"estimate", c.point.delta},
                    {"lower_bound", c.point.lower_bound},
                    {"upper_bound", c.point.upper_bound},
                    {"status", c.point.convention ? "convention" : "estimated"},
                    {"sigma2_c", c.variance.sigma2_c},
                    {"tau2", c.variance.tau2},
                    {"se", c.variance.se_late},
                    {"wald", detail::opt_json(c.wald)},
                    {"ci", detail::opt_json(c.ci)},
                    {"se_boot", detail::opt_json(c.se_boot)}});
  }
  j["grid"] = grid;
  json xi = json::array();
  for (const auto& x : r.xi_table) {
    xi.push_back({{"gamma", x.xi.gamma}, {"xi", x.xi.xi}, {"se", x.se}, {"ci", detail::opt_json(x.ci)}});
  }
  j["xi"] = xi;
  json eng = json::array();
  for (const auto& e : r.thresholds.engagement) {
    eng.push_back({{"gamma", e.gamma},
                   {"status", detail::status_name(e.solution.status)},
                   {"a", detail::opt_json(e.solution.a)},
                   {"h_target", std::isnan(e.solution.h_target) ? json(nullptr) : json(e.solution.h_target)}});
  }
  j["thresholds"] = {{"xi_threshold", detail::opt_json(r.thresholds.xi_threshold)},
                     {"gamma_star", detail::opt_json(r.thresholds.gamma_star)},
                     {"effect_threshold", detail::opt_json(r.thresholds.effect_threshold)},
                     {"engagement", eng}};
  const auto& m = r.metadata;
  j["metadata"] = {{"seed", m.seed},
                   {"bootstrap_reps", m.bootstrap_reps},
                   {"ci_level", m.ci_level},
                   {"transform", m.transform},
                   {"itt_method", m.itt_method},
                   {"adjustment", m.adjustment},
                   {"degenerate_redraws", m.degenerate_redraws},
                   {"source", m.source},
                   {"input_sha256", m.input_digest},
                   {"created_utc", m.created_utc}};
  return j;
}

inline AnalysisReport report_from_json(const nlohmann::json& j) {
  AnalysisReport r;
  const auto& itt = j.at("itt");
  r.itt.delta_itt = itt.at("estimate").get<double>();
  r.itt.sigma2_itt = itt.at("sigma2").get<double>();
  r.itt.method = itt.at("method").get<std::string>() == "diff" ? IttMethod::DiffMeans : IttMethod::OlsAdjusted;
  r.itt.n_total = itt.at("n").get<std::size_t>();
  r.itt_wald = detail::opt_from<WaldTest>(itt.at("wald"));
  r.itt_ci = detail::opt_from<Interval>(itt.at("ci"));
  const auto& mu = j.at("mu_h");
  r.mu.mu_h = mu.at("estimate").get<double>();
  r.mu.sigma2_h = mu.at("sigma2").get<double>();
  r.mu.n1 = mu.at("n1").get<std::size_t>();
  r.mu.n_total = mu.at("n").get<std::size_t>();
  r.mu_ci = detail::opt_from<Interval>(mu.at("ci"));
  r.gammas = j.at("gammas").get<std::vector<double>>();
  r.a_values = j.at("a_values").get<std::vector<double>>();
  for (const auto& c : j.at("grid")) {
    GridCell cell;
    cell.point.gamma = c.at("gamma").get<double>();
    cell.point.a = c.at("a").get<double>();
    cell.point.h_a = c.at("h_a").get<double>();
    cell.point.c_factor = c.at("c_factor").get<double>();
    cell.point.delta = c.at("estimate").get<double>();
    cell.point.lower_bound = c.at("lower_bound").get<double>();
    cell.point.upper_bound = c.at("upper_bound").get<double>();
    cell.point.convention = c.at("status").get<std::string>() == "convention";
    cell.variance.sigma2_c = c.at("sigma2_c").get<double>();
    cell.variance.tau2 = c.at("tau2").get<double>();
    cell.variance.se_late = c.at("se").get<double>();
    cell.wald = detail::opt_from<WaldTest>(c.at("wald"));
    cell.ci = detail::opt_from<Interval>(c.at("ci"));
    cell.se_boot = detail::opt_from<double>(c.at("se_boot"));
    r.grid.push_back(cell);
  }
  for (const auto& x : j.at("xi")) {
    XiRow row;
    row.xi.gamma = x.at("gamma").get<double>();
    row.xi.xi = x.at("xi").get<double>();
    row.se = x.at("se").get<double>();
    row.ci = detail::opt_from<Interval>(x.at("ci"));
    r.xi_table.push_back(row);
  }
  const auto& t = j.at("thresholds");
  r.thresholds.xi_threshold = detail::opt_from<double>(t.at("xi_threshold"));
  r.thresholds.gamma_star = detail::opt_from<double>(t.at("gamma_star"));
  r.thresholds.effect_threshold = detail::opt_from<double>(t.at("effect_threshold"));
  for (const auto& e : t.at("engagement")) {
    EngagementSolution s;
    s.gamma = e.at("gamma").get<double>();
    s.solution.status = detail::status_from(e.at("status").get<std::string>());
    s.solution.a = detail::opt_from<double>(e.at("a"));
    s.solution.h_target = e.at("h_target").is_null() ? std::numeric_limits<double>::quiet_NaN()
                                                     : e.at("h_target").get<double>();
    r.thresholds.engagement.push_back(s);
  }
  const auto& m = j.at("metadata");
  r.metadata.seed = m.at("seed").get<std::uint64_t>();
  r.metadata.bootstrap_reps = m.at("bootstrap_reps").get<int>();
  r.metadata.ci_level = m.at("ci_level").get<double>();
  r.metadata.transform = m.at("transform").get<std::string>();
  r.metadata.itt_method = m.at("itt_method").get<std::string>();
  r.metadata.adjustment = m.at("adjustment").get<std::vector<std::string>>();
  r.metadata.degenerate_redraws = m.at("degenerate_redraws").get<std::size_t>();
  r.metadata.source = m.at("source").get<std::string>();
  r.metadata.input_digest = m.at("input_sha256").get<std::string>();
  r.metadata.created_utc = m.at("created_utc").get<std::string>();
  return r;
}

// ---------------------------------------------------------------------------
// Text table

inline void write_report_table(std::ostream& os, const AnalysisReport& r) {
  const auto fmt = [](double v, int prec = 3) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(prec) << v;
    return s.str();
  };
  const auto ci_text = [&](const std::optional<Interval>& ci) {
    return ci ? "[" + fmt(ci->lower, 2) + ", " + fmt(ci->upper, 2) + "]" : std::string("NA");
  };

  os << "ITT (" << itt_method_name(r.itt.method) << "): " << fmt(r.itt.delta_itt) << "  SE " << fmt(r.itt.se())
     << "  CI " << ci_text(r.itt_ci);
  if (r.itt_wald) os << "  p = " << fmt(r.itt_wald->p_value, 4);
  os << "\nmu_h: " << fmt(r.mu.mu_h) << "  (N1 = " << r.mu.n1 << ", N = " << r.mu.n_total << ")\n\n";

  os << std::setw(6) << "gamma";
  for (double a : r.a_values) os << " | " << std::setw(24) << ("Delta(" + fmt(a) + ")");
  os << '\n';
  for (std::size_t gi = 0; gi < r.gammas.size(); ++gi) {
    os << std::setw(6) << fmt(r.gammas[gi], 2);
    for (std::size_t ai = 0; ai < r.a_values.size(); ++ai) {
      const GridCell& c = r.cell(gi, ai);
      const std::string ci = c.point.convention ? std::string("NA") : ci_text(c.ci);
      os << " | " << std::setw(7) << fmt(c.point.delta, 2) << ' ' << std::setw(16) << ci;
    }
    os << '\n';
  }
  os << "\nbounds (gamma in [0,1]):";
  for (std::size_t ai = 0; ai < r.a_values.size(); ++ai) {
    const GridCell& c = r.cell(0, ai);
    os << "  a=" << fmt(c.point.a) << " [" << fmt(c.point.lower_bound) << ", " << fmt(c.point.upper_bound) << "]";
  }
  os << "\n\n" << std::setw(6) << "gamma" << " | " << std::setw(8) << "xi" << " | CI\n";
  for (const auto& x : r.xi_table) {
    os << std::setw(6) << fmt(x.xi.gamma, 2) << " | " << std::setw(8) << fmt(x.xi.xi) << " | " << ci_text(x.ci)
       << '\n';
  }
  if (r.thresholds.xi_threshold) {
    os << "\n|xi| > " << fmt(*r.thresholds.xi_threshold) << " for gamma < "
       << (r.thresholds.gamma_star ? fmt(*r.thresholds.gamma_star) : std::string("(no gamma in [0,1])")) << '\n';
  }
  if (r.thresholds.effect_threshold) {
    os << "\n|Delta(a)| >= " << fmt(*r.thresholds.effect_threshold) << ":\n";
    for (const auto& e : r.thresholds.engagement) {
      os << "  gamma " << fmt(e.gamma, 2) << ": ";
      switch (e.solution.status) {
        case EngagementThreshold::Status::Solved: os << "a >= " << fmt(*e.solution.a); break;
        case EngagementThreshold::Status::NonUnique: os << "a > " << fmt(*e.solution.a) << " (set boundary)"; break;
        case EngagementThreshold::Status::AllExceed: os << "all engagement levels"; break;
        case EngagementThreshold::Status::NoneReach: os << "no engagement level"; break;
      }
      os << '\n';
    }
  }
  if (r.metadata.bootstrap_reps > 0) {
    os << "\nbootstrap: B = " << r.metadata.bootstrap_reps << ", level " << r.metadata.ci_level << ", seed "
       << r.metadata.seed << ", redraws " << r.metadata.degenerate_redraws << '\n';
  }
}

}  // namespace late_bounds
