// late_bounds: analyze trial data, sweep sensitivity curves, run simulations.

#include <openssl/evp.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "late_bounds/csv.hpp"
#include "late_bounds/error.hpp"
#include "late_bounds/parallel.hpp"
#include "late_bounds/report.hpp"
#include "late_bounds/simulate.hpp"
#include "late_bounds/sweep.hpp"

namespace lb = late_bounds;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitEstimation = 3;
constexpr int kExitIo = 4;

std::string sha256_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr) != 1) {
    throw lb::Error(lb::Errc::IoError, "SHA-256 digest failed");
  }
  std::ostringstream s;
  for (unsigned int i = 0; i < len; ++i) s << std::hex << std::setw(2) << std::setfill('0') << int(md[i]);
  return s.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::vector<double> parse_list(const std::string& text, const std::string& flag) {
  return lb::detail::parse_number_list(text, flag);
}

std::vector<std::string> split_names(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = lb::detail::trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

/// COL:quartiles or COL:k1,k2,k3
lb::SplineTerm parse_spline(const std::string& text) {
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon == 0) {
    throw lb::Error(lb::Errc::InvalidConfig, "--spline expects COL:quartiles or COL:k1,k2,...; got '" + text + "'");
  }
  lb::SplineTerm term;
  term.column = text.substr(0, colon);
  const std::string policy = text.substr(colon + 1);
  if (policy != "quartiles") term.knots = parse_list(policy, "--spline " + term.column);
  return term;
}

/// Writes to `path`, or stdout when empty or "-".
template <class Fn>
void emit(const std::string& path, Fn&& write) {
  if (path.empty() || path == "-") {
    write(std::cout);
    std::cout.flush();
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw lb::Error(lb::Errc::IoError, "cannot open '" + path + "' for writing");
  write(out);
  if (!out) throw lb::Error(lb::Errc::IoError, "write to '" + path + "' failed");
}

struct CommonFlags {
  std::string gamma_grid;
  std::string a_grid = "auto";
  std::string transform = "identity";
  std::string adjust;
  std::vector<std::string> splines;
  std::string itt;
  int bootstrap = 500;
  double level = 0.95;
  std::uint64_t seed = 20210101;
  std::string out;
  std::string svg;
};

void add_analysis_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--gamma-grid", f.gamma_grid, "comma-separated gamma values (default 0,0.25,0.5,0.75,1)");
  cmd->add_option("--transform", f.transform, "identity | threshold:Z | table:PATH")->capture_default_str();
  cmd->add_option("--adjust", f.adjust, "covariates entering the ITT regression linearly");
  cmd->add_option("--spline", f.splines, "COL:quartiles or COL:k1,k2,k3 (restricted cubic spline)");
  cmd->add_option("--itt", f.itt, "diff | ols (ols when adjusting)")->check(CLI::IsMember({"diff", "ols"}));
  cmd->add_option("--level", f.level, "bootstrap interval level")->capture_default_str();
  cmd->add_option("--seed", f.seed, "bootstrap master seed")->capture_default_str();
  cmd->add_option("--out", f.out, "output path (stdout when omitted)");
  cmd->add_option("--svg", f.svg, "also write an SVG chart here");
}

lb::AnalysisConfig build_config(const CommonFlags& f) {
  lb::AnalysisConfig cfg;
  if (!f.gamma_grid.empty()) {
    cfg.gamma_grid.clear();
    for (double g : parse_list(f.gamma_grid, "--gamma-grid")) cfg.gamma_grid.emplace_back(g);
  }
  if (f.a_grid != "auto") {
    cfg.a_grid.clear();
    cfg.include_mean_engagement = false;
    for (const auto& tok : split_names(f.a_grid)) {
      if (tok == "mu") cfg.include_mean_engagement = true;
      else for (double a : parse_list(tok, "--a-grid")) cfg.a_grid.push_back(a);
    }
  }
  cfg.transform = lb::parse_transform(f.transform);
  cfg.adjustment.linear = split_names(f.adjust);
  for (const auto& s : f.splines) cfg.adjustment.splines.push_back(parse_spline(s));
  if (f.itt.empty()) cfg.itt_method = cfg.adjustment.empty() ? lb::IttMethod::DiffMeans : lb::IttMethod::OlsAdjusted;
  else cfg.itt_method = f.itt == "diff" ? lb::IttMethod::DiffMeans : lb::IttMethod::OlsAdjusted;
  cfg.bootstrap_reps = f.bootstrap;
  cfg.ci_level = f.level;
  cfg.seed = f.seed;
  cfg.validate();
  return cfg;
}

void warn_redraws(const lb::AnalysisReport& r) {
  if (r.metadata.degenerate_redraws > 0) {
    std::cerr << "warning: " << r.metadata.degenerate_redraws << " degenerate bootstrap resamples were redrawn\n";
  }
}

lb::AnalysisReport run_analysis(const std::string& data_path, const lb::AnalysisConfig& cfg,
                                const lb::ThresholdRequest& req) {
  const lb::CsvTrial trial = lb::load_trial_csv(data_path);
  lb::AnalysisReport rep = lb::analyze(trial.data, cfg, req, lb::default_workers());
  rep.metadata.source = data_path;
  rep.metadata.input_digest = sha256_hex(trial.bytes);
  rep.metadata.created_utc = utc_now();
  warn_redraws(rep);
  return rep;
}

// ---------------------------------------------------------------------------
// simulate output

nlohmann::json mc_to_json(const lb::McSummary& s, const std::string& name) {
  using nlohmann::json;
  const auto num = [](double v) { return std::isnan(v) ? json(nullptr) : json(v); };
  json rows = json::array();
  for (const auto& q : s.quantities) {
    rows.push_back({{"label", q.label},
                    {"gamma", num(q.gamma)},
                    {"a", num(q.a)},
                    {"truth", q.truth},
                    {"target", q.target},
                    {"est", q.mean},
                    {"ese", q.ese},
                    {"se_lst", q.mean_se_lst},
                    {"se_boot", num(q.mean_se_boot)}});
  }
  const auto& p = s.spec;
  return {{"scenario", name},
          {"k", s.k},
          {"b", s.b},
          {"seed", s.seed},
          {"true_mu_a", s.true_mu_a},
          {"true_gamma", s.true_gamma},
          {"true_itt", s.true_itt},
          {"spec",
           {{"n", p.n},         {"alpha01", p.alpha01}, {"alpha11", p.alpha11}, {"alpha00", p.alpha00},
            {"alpha10", p.alpha10}, {"alpha0", p.alpha0}, {"alpha1", p.alpha1},   {"sigma_a", p.sigma_a},
            {"beta0", p.beta0}, {"beta1", p.beta1},     {"beta2", p.beta2},     {"beta3", p.beta3},
            {"beta4", p.beta4}, {"sigma_y", p.sigma_y}, {"p_z", p.p_z}}},
          {"rows", rows}};
}

void write_mc_table(std::ostream& os, const lb::McSummary& s) {
  const auto f = [](double v) {
    std::ostringstream o;
    if (std::isnan(v)) o << "NA";
    else o << std::fixed << std::setprecision(3) << v;
    return o.str();
  };
  os << "N = " << s.spec.n << ", K = " << s.k << ", B = " << s.b << ", true gamma " << f(s.true_gamma)
     << ", true mu_A " << f(s.true_mu_a) << '\n';
  os << std::left << std::setw(26) << "quantity" << std::right << std::setw(8) << "truth" << std::setw(8) << "Est"
     << std::setw(8) << "ESE" << std::setw(8) << "SE_LST" << std::setw(8) << "SE_B" << '\n';
  for (const auto& q : s.quantities) {
    os << std::left << std::setw(26) << q.label << std::right << std::setw(8) << f(q.truth) << std::setw(8)
       << f(q.mean) << std::setw(8) << f(q.ese) << std::setw(8) << f(q.mean_se_lst) << std::setw(8)
       << f(q.mean_se_boot) << '\n';
  }
}

int exit_code_for(const lb::Error& e) {
  switch (e.category()) {
    case lb::ErrorCategory::Validation: return kExitValidation;
    case lb::ErrorCategory::Estimation: return kExitEstimation;
    case lb::ErrorCategory::Io: return kExitIo;
  }
  return kExitEstimation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Engagement-indexed treatment effects under exclusion-restriction violations"};
  app.require_subcommand(1);

  // analyze
  CommonFlags af;
  std::string a_data, a_format = "json";
  std::optional<double> xi_threshold, effect_threshold;
  auto* analyze = app.add_subcommand("analyze", "estimate the (gamma, a) grid with inference");
  analyze->add_option("--data", a_data, "trial CSV with columns z,a,y[,covariates]")->required();
  analyze->add_option("--a-grid", af.a_grid, "comma list, 'mu' adds the mean engagement; 'auto' = 0,0.5,mu,1")
      ->capture_default_str();
  analyze->add_option("--bootstrap", af.bootstrap, "bootstrap replicates (0 disables)")->capture_default_str();
  add_analysis_flags(analyze, af);
  analyze->add_option("--format", a_format, "json | table | csv")
      ->check(CLI::IsMember({"json", "table", "csv"}))
      ->capture_default_str();
  analyze->add_option("--xi-threshold", xi_threshold, "solve for the gamma below which |xi| exceeds this");
  analyze->add_option("--effect-threshold", effect_threshold, "solve for the engagement where |Delta(a)| reaches this");

  // sweep
  CommonFlags sf;
  sf.bootstrap = 0;
  sf.a_grid = "101";
  std::string s_data;
  std::optional<double> s_itt, s_mu;
  auto* sweep = app.add_subcommand("sweep", "long-format (gamma, a) curves for plotting");
  sweep->add_option("--data", s_data, "trial CSV (or give --delta-itt and --mu-h)");
  sweep->add_option("--delta-itt", s_itt, "explicit ITT effect");
  sweep->add_option("--mu-h", s_mu, "explicit instrument strength mu_h");
  sweep->add_option("--a-grid", sf.a_grid, "point count on [0,1] or explicit comma list")->capture_default_str();
  sweep->add_option("--bootstrap", sf.bootstrap, "bootstrap replicates in dataset mode")->capture_default_str();
  add_analysis_flags(sweep, sf);

  // simulate
  std::string scenario_path, m_out, m_format = "json";
  std::size_t k = 200, b = 200;
  std::uint64_t m_seed = 17;
  bool full = false;
  std::optional<std::size_t> n_override;
  std::string m_gamma;
  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study of a scenario file");
  simulate->add_option("--scenario", scenario_path, "scenario file (name = value lines)")->required();
  auto* k_opt = simulate->add_option("--k", k, "iterations")->capture_default_str();
  auto* b_opt = simulate->add_option("--b", b, "bootstrap replicates per iteration (0 skips)")->capture_default_str();
  simulate->add_option("--seed", m_seed, "master seed")->capture_default_str();
  simulate->add_flag("--full", full, "K = 1000, B = 500")->excludes(k_opt)->excludes(b_opt);
  simulate->add_option("--n", n_override, "override the scenario sample size");
  simulate->add_option("--gamma", m_gamma, "override the specified gamma list");
  simulate->add_option("--out", m_out, "output path (stdout when omitted)");
  simulate->add_option("--format", m_format, "json | table")->check(CLI::IsMember({"json", "table"}))
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*analyze) {
      const lb::AnalysisConfig cfg = build_config(af);
      const lb::AnalysisReport rep = run_analysis(a_data, cfg, {xi_threshold, effect_threshold});
      emit(af.out, [&](std::ostream& os) {
        if (a_format == "json") os << std::setw(2) << lb::report_to_json(rep) << '\n';
        else if (a_format == "table") lb::write_report_table(os, rep);
        else lb::write_sweep_csv(os, lb::sweep_from_report(rep));
      });
      if (!af.svg.empty()) emit(af.svg, [&](std::ostream& os) { lb::write_sweep_svg(os, lb::sweep_from_report(rep)); });
    } else if (*sweep) {
      const bool explicit_pair = s_itt || s_mu;
      if (explicit_pair && !s_data.empty()) {
        throw lb::Error(lb::Errc::ConflictingInputs, "give either --data or --delta-itt/--mu-h, not both");
      }
      if (!explicit_pair && s_data.empty()) {
        throw lb::Error(lb::Errc::InvalidConfig, "sweep needs --data or both --delta-itt and --mu-h");
      }
      if (explicit_pair && !(s_itt && s_mu)) {
        throw lb::Error(lb::Errc::InvalidConfig, "--delta-itt and --mu-h must be given together");
      }
      // A bare integer means that many equispaced points.
      std::vector<double> grid;
      if (sf.a_grid.find_first_not_of("0123456789") == std::string::npos) {
        grid = lb::uniform_grid(std::stoul(sf.a_grid));
      } else {
        grid = parse_list(sf.a_grid, "--a-grid");
      }
      std::vector<lb::SweepRow> rows;
      if (explicit_pair) {
        CommonFlags f;
        f.gamma_grid = sf.gamma_grid;
        f.transform = sf.transform;
        const lb::AnalysisConfig cfg = build_config(f);
        std::vector<double> gammas;
        for (const auto& g : cfg.gamma_grid) gammas.push_back(g.value());
        rows = lb::sweep_explicit(*s_itt, *s_mu, gammas, grid, lb::validate(cfg.transform));
      } else {
        CommonFlags f = sf;
        f.a_grid = "auto";
        lb::AnalysisConfig cfg = build_config(f);
        cfg.a_grid = grid;
        cfg.include_mean_engagement = false;
        rows = lb::sweep_from_report(run_analysis(s_data, cfg, {}));
      }
      emit(sf.out, [&](std::ostream& os) { lb::write_sweep_csv(os, rows); });
      if (!sf.svg.empty()) emit(sf.svg, [&](std::ostream& os) { lb::write_sweep_svg(os, rows); });
    } else if (*simulate) {
      std::ifstream in(scenario_path);
      if (!in) throw lb::Error(lb::Errc::IoError, "cannot open scenario '" + scenario_path + "'");
      lb::ScenarioFile sc = lb::parse_scenario(in, scenario_path);
      if (n_override) sc.spec.n = *n_override;
      if (!m_gamma.empty()) sc.gammas = parse_list(m_gamma, "--gamma");
      if (full) {
        k = 1000;
        b = 500;
      }
      if (k < 50) std::cerr << "warning: K = " << k << " iterations; ESE and mean SEs are unreliable\n";
      lb::McOptions opt;
      opt.gammas = sc.gammas;
      opt.a_grid = sc.a_grid;
      opt.k = k;
      opt.b = b;
      opt.seed = m_seed;
      opt.workers = lb::default_workers();
      const lb::McSummary sum = lb::monte_carlo(sc.spec, opt);
      emit(m_out, [&](std::ostream& os) {
        if (m_format == "json") os << std::setw(2) << mc_to_json(sum, sc.name) << '\n';
        else write_mc_table(os, sum);
      });
    }
  } catch (const lb::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitEstimation;
  }
  return kExitOk;
}
