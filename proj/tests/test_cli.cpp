#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>

#include "json.hpp"
#include "late_bounds/csv.hpp"
#include "late_bounds/report.hpp"
#include "late_bounds/sweep.hpp"
#include "support.hpp"

namespace lb = late_bounds;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct RunResult {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

class Workdir {
 public:
  Workdir() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("lb_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(dir_);
  }
  ~Workdir() { fs::remove_all(dir_); }
  fs::path path(const std::string& name) const { return dir_ / name; }
  fs::path write(const std::string& name, const std::string& body) const {
    std::ofstream(path(name), std::ios::binary) << body;
    return path(name);
  }

  RunResult run(const std::string& args, const std::string& env = "") const {
    const auto out = path("stdout.txt"), err = path("stderr.txt");
    const std::string cmd = env + " '" + std::string(LATE_BOUNDS_CLI) + "' " + args + " >'" + out.string() +
                            "' 2>'" + err.string() + "'";
    const int status = std::system(cmd.c_str());
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
  }

 private:
  fs::path dir_;
};

/// Control y = 9 +/- 0.5, treated y = 9 - 0.761 +/- 0.5 and mean engagement 0.814.
std::string reach_like_csv() {
  std::ostringstream s;
  s << "z,a,y,bmi\n";
  for (int i = 0; i < 100; ++i) s << "0,," << (i % 2 ? 9.5 : 8.5) << ',' << 25 + i % 7 << '\n';
  for (int i = 0; i < 500; ++i) {
    const double a = i < 407 ? 1.0 : 0.0;
    s << "1," << a << ',' << 9.0 - 0.761 + (i % 2 ? 0.5 : -0.5) << ',' << 24 + i % 9 << '\n';
  }
  return s.str();
}

std::string random_csv(std::uint64_t seed, std::size_t n0 = 60, std::size_t n1 = 70) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd;
  std::uniform_real_distribution<double> unif;
  std::ostringstream s;
  s.precision(17);
  s << "z,a,y,x\n";
  for (std::size_t i = 0; i < n0; ++i) s << "0,0," << 9 + nd(rng) << ',' << nd(rng) << '\n';
  for (std::size_t i = 0; i < n1; ++i) {
    const double a = unif(rng);
    s << "1," << a << ',' << 9 - 0.8 * a + nd(rng) << ',' << nd(rng) << '\n';
  }
  return s.str();
}

const json& cell(const json& rep, double g, double a) {
  for (const auto& c : rep.at("grid"))
    if (c.at("gamma").get<double>() == g && std::abs(c.at("a").get<double>() - a) < 1e-12) return c;
  throw std::runtime_error("no such cell");
}

std::vector<std::map<std::string, std::string>> read_csv_rows(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  const auto header = lb::detail::split_csv_line(line);
  std::vector<std::map<std::string, std::string>> rows;
  while (std::getline(in, line)) {
    const auto cells = lb::detail::split_csv_line(line);
    std::map<std::string, std::string> row;
    for (std::size_t i = 0; i < header.size(); ++i) row[header[i]] = cells.at(i);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace

// ---------------------------------------------------------------------------
// CSV input

TEST(TrialCsv, ParsesHeaderAnyOrderAndCovariates) {
  const auto ds = lb::parse_trial_csv("\xEF\xBB\xBFy,bmi,z,a\n9.1,25,0,\n8.2,27,1,0.5\n8.0,22,1,1\n");
  EXPECT_EQ(ds.size(), 3u);
  EXPECT_EQ(ds.covariate_names(), std::vector<std::string>{"bmi"});
  EXPECT_EQ(ds.rows()[0].a, 0.0);
  EXPECT_EQ(ds.rows()[1].covariates[0], 27.0);
}

TEST(TrialCsv, ErrorsCarryRowAndColumn) {
  const auto message = [](const std::string& text) {
    try {
      (void)lb::parse_trial_csv(text, "d.csv");
    } catch (const lb::Error& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message("z,a,y\n0,,9\n1,,8\n").find("d.csv:3, column 'a'"), std::string::npos);
  EXPECT_NE(message("z,a,y\n0,0,9\n1,0.5,\n").find("d.csv:3, column 'y'"), std::string::npos);
  EXPECT_NE(message("z,a,y\n0,0,9\n1,0.5,abc\n").find("not a number"), std::string::npos);
  EXPECT_NE(message("z,a\n0,0\n").find("'y' missing"), std::string::npos);
  EXPECT_NE(message("z,a,y\n0,0.2,9\n1,0.5,8\n").find("ControlEngagement"), std::string::npos);
  EXPECT_NE(message("z,a,y\n0,0,9,1\n").find("expected 3 fields"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Reports

TEST(Report, JsonRoundTripIsBitExact) {
  std::mt19937_64 rng(51);
  const auto ds = testing_support::random_dataset(rng, {30, 60, 1, 0.2});
  lb::AnalysisConfig cfg;
  cfg.bootstrap_reps = 60;
  const auto rep = lb::analyze(ds, cfg, {0.1, 0.2});
  const json j = lb::report_to_json(rep);
  const json again = lb::report_to_json(lb::report_from_json(json::parse(j.dump())));
  EXPECT_EQ(j, again);
  const auto back = lb::report_from_json(json::parse(j.dump(2)));
  ASSERT_EQ(back.grid.size(), rep.grid.size());
  for (std::size_t i = 0; i < rep.grid.size(); ++i) {
    EXPECT_EQ(back.grid[i].point.delta, rep.grid[i].point.delta);
    EXPECT_EQ(back.grid[i].variance.tau2, rep.grid[i].variance.tau2);
    EXPECT_EQ(back.grid[i].ci->lower, rep.grid[i].ci->lower);
  }
  EXPECT_EQ(back.itt.sigma2_itt, rep.itt.sigma2_itt);
}

TEST(Report, CellIntervalsContainEstimates) {
  std::mt19937_64 rng(52);
  for (int t = 0; t < 5; ++t) {
    const auto ds = testing_support::random_dataset(rng, {80, 150, 0, 0.2});
    lb::AnalysisConfig cfg;
    cfg.bootstrap_reps = 200;
    cfg.seed = 10 + t;
    const auto rep = lb::analyze(ds, cfg);
    for (const auto& c : rep.grid) {
      ASSERT_TRUE(c.ci);
      EXPECT_LE(c.ci->lower, c.point.delta + 1e-12);
      EXPECT_GE(c.ci->upper, c.point.delta - 1e-12);
    }
  }
}

TEST(Report, ConventionCellHasNoTest) {
  std::mt19937_64 rng(53);
  const auto ds = testing_support::random_dataset(rng);
  lb::AnalysisConfig cfg;
  cfg.bootstrap_reps = 0;
  const auto rep = lb::analyze(ds, cfg);
  const auto& c = rep.cell(0, 0);
  EXPECT_TRUE(c.point.convention);
  EXPECT_EQ(c.variance.tau2, 0.0);
  EXPECT_FALSE(c.wald);
  EXPECT_EQ(rep.a_values.size(), 4u);
}

TEST(Report, TableMentionsEveryGamma) {
  std::mt19937_64 rng(54);
  lb::AnalysisConfig cfg;
  cfg.bootstrap_reps = 0;
  const auto rep = lb::analyze(testing_support::random_dataset(rng), cfg, {0.1, 0.3});
  std::ostringstream os;
  lb::write_report_table(os, rep);
  for (const char* g : {"0.00", "0.25", "0.50", "0.75", "1.00"}) EXPECT_NE(os.str().find(g), std::string::npos);
}

// ---------------------------------------------------------------------------
// Sweeps

TEST(Sweep, CurvesCrossAtMeanEngagement) {
  const auto h = lb::validate(lb::TransformSpec::identity());
  auto grid = lb::uniform_grid(101);
  grid.push_back(0.814);
  const auto rows = lb::sweep_explicit(-0.761, 0.814, {0.0, 0.5, 1.0}, grid, h);
  ASSERT_EQ(rows.size(), 3u * 102u);
  int crossings = 0;
  for (const auto& r : rows) {
    if (r.a == 0.814) {
      EXPECT_NEAR(r.delta, -0.761, 1e-12);
      ++crossings;
    }
  }
  EXPECT_EQ(crossings, 3);
  for (std::size_t i = 1; i < rows.size(); ++i) {
    const bool ordered = rows[i - 1].gamma < rows[i].gamma ||
                         (rows[i - 1].gamma == rows[i].gamma && rows[i - 1].a < rows[i].a);
    EXPECT_TRUE(ordered);
  }
}

TEST(Sweep, NullEffectIsFlat) {
  const auto h = lb::validate(lb::TransformSpec::identity());
  for (const auto& r : lb::sweep_explicit(0.0, 0.6, {0.0, 0.5, 1.0}, lb::uniform_grid(11), h)) {
    EXPECT_EQ(r.delta, 0.0);
    EXPECT_EQ(r.lower, 0.0);
    EXPECT_EQ(r.upper, 0.0);
  }
}

TEST(Sweep, PerfectInstrument) {
  const auto h = lb::validate(lb::TransformSpec::identity());
  std::vector<double> gammas;
  for (int i = 0; i <= 10; ++i) gammas.push_back(i / 10.0);
  const auto rows = lb::sweep_explicit(-0.5, 1.0, gammas, {0.0, 1.0}, h);
  std::vector<double> d0;
  for (const auto& r : rows) {
    if (r.a == 1.0) {
      EXPECT_NEAR(r.delta, -0.5, 1e-15);
    } else {
      d0.push_back(r.delta);
    }
  }
  for (std::size_t i = 0; i < d0.size(); ++i) EXPECT_NEAR(d0[i], -0.5 * gammas[i], 1e-15);
}

TEST(Sweep, SvgHasTwoPanelsAndOneCurvePerGamma) {
  const auto h = lb::validate(lb::TransformSpec::identity());
  const auto rows = lb::sweep_explicit(-0.761, 0.814, {0.0, 0.5, 1.0}, lb::uniform_grid(21), h);
  std::ostringstream os;
  lb::write_sweep_svg(os, rows);
  const std::string svg = os.str();
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  std::size_t polylines = 0;
  for (auto p = svg.find("<polyline"); p != std::string::npos; p = svg.find("<polyline", p + 1)) ++polylines;
  EXPECT_EQ(polylines, 2u + 3u + 2u);
  EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

// ---------------------------------------------------------------------------
// Binary

TEST(Cli, AnalyzeReproducesPublishedCell) {
  Workdir w;
  const auto data = w.write("reach.csv", reach_like_csv());
  const auto r = w.run("analyze --data '" + data.string() + "' --bootstrap 0");
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(r.out);
  EXPECT_NEAR(rep["itt"]["estimate"].get<double>(), -0.761, 1e-12);
  EXPECT_NEAR(rep["mu_h"]["estimate"].get<double>(), 0.814, 1e-12);
  EXPECT_NEAR(cell(rep, 0.75, 0.0)["estimate"].get<double>(), -0.60, 0.01);
  EXPECT_EQ(rep["a_values"].size(), 4u);
  EXPECT_EQ(cell(rep, 0.0, 0.0)["status"], "convention");
}

TEST(Cli, InputDigestMatchesSha256sum) {
  Workdir w;
  const auto data = w.write("d.csv", random_csv(1));
  const auto r = w.run("analyze --data '" + data.string() + "' --bootstrap 0");
  ASSERT_EQ(r.code, 0) << r.err;
  // sha256sum prints "<hex>  <path>"
  FILE* p = ::popen(("sha256sum '" + data.string() + "'").c_str(), "r");
  ASSERT_NE(p, nullptr);
  char buf[65] = {};
  ASSERT_EQ(std::fread(buf, 1, 64, p), 64u);
  ::pclose(p);
  EXPECT_EQ(json::parse(r.out)["metadata"]["input_sha256"], std::string(buf));
}

TEST(Cli, GammaOneEqualsItt) {
  Workdir w;
  const auto data = w.write("d.csv", random_csv(2));
  const auto r = w.run("analyze --data '" + data.string() + "' --bootstrap 0 --gamma-grid 1");
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(r.out);
  const double itt = rep["itt"]["estimate"];
  const double se = rep["itt"]["se"];
  for (const auto& c : rep["grid"]) {
    EXPECT_EQ(c["estimate"].get<double>(), itt);
    EXPECT_DOUBLE_EQ(c["se"].get<double>(), se);
    EXPECT_DOUBLE_EQ(c["wald"]["statistic"].get<double>(), rep["itt"]["wald"]["statistic"].get<double>());
  }
}

TEST(Cli, ThresholdTransformPerfectInstrument) {
  Workdir w;
  std::ostringstream s;
  s << "z,a,y\n";
  for (int i = 0; i < 20; ++i) s << "0,0," << 9 + 0.1 * (i % 5) << '\n';
  for (int i = 0; i < 20; ++i) s << "1," << 0.55 + 0.02 * i << ',' << 8 + 0.1 * (i % 3) << '\n';
  const auto data = w.write("d.csv", s.str());
  const auto r = w.run("analyze --data '" + data.string() + "' --bootstrap 0 --transform threshold:0.5 --a-grid 0.6,0.9");
  ASSERT_EQ(r.code, 0) << r.err;
  const json rep = json::parse(r.out);
  EXPECT_EQ(rep["mu_h"]["estimate"].get<double>(), 1.0);
  for (const auto& c : rep["grid"]) EXPECT_DOUBLE_EQ(c["estimate"].get<double>(), rep["itt"]["estimate"].get<double>());
}

TEST(Cli, ThresholdsInReport) {
  Workdir w;
  const auto data = w.write("reach.csv", reach_like_csv());
  const auto r = w.run("analyze --data '" + data.string() +
                       "' --bootstrap 0 --xi-threshold 0.25 --effect-threshold 0.5 --gamma-grid 0.5,0.75");
  ASSERT_EQ(r.code, 0) << r.err;
  const json t = json::parse(r.out)["thresholds"];
  EXPECT_NEAR(t["gamma_star"].get<double>(), 0.690, 0.001);
  EXPECT_EQ(t["engagement"][0]["status"], "solved");
  EXPECT_NEAR(t["engagement"][0]["a"].get<double>(), 0.192, 0.001);
  EXPECT_EQ(t["engagement"][1]["status"], "all_exceed");
  EXPECT_TRUE(t["engagement"][1]["a"].is_null());
}

TEST(Cli, DeterministicAcrossThreadCounts) {
  Workdir w;
  const auto data = w.write("d.csv", random_csv(3));
  const std::string args = "analyze --data '" + data.string() + "' --bootstrap 80 --seed 5 --adjust x";
  auto a = json::parse(w.run(args, "LATE_BOUNDS_THREADS=1").out);
  auto b = json::parse(w.run(args, "LATE_BOUNDS_THREADS=4").out);
  a["metadata"].erase("created_utc");
  b["metadata"].erase("created_utc");
  EXPECT_EQ(a, b);
  EXPECT_EQ(a["itt"]["method"], "ols");
}

TEST(Cli, FormatsAndSvg) {
  Workdir w;
  const auto data = w.write("d.csv", random_csv(4));
  const auto table = w.run("analyze --data '" + data.string() + "' --bootstrap 0 --format table");
  ASSERT_EQ(table.code, 0);
  EXPECT_NE(table.out.find("ITT (diff)"), std::string::npos);
  const auto svg = w.path("p.svg");
  const auto out = w.path("o.csv");
  const auto csv = w.run("analyze --data '" + data.string() + "' --bootstrap 30 --format csv --out '" +
                         out.string() + "' --svg '" + svg.string() + "'");
  ASSERT_EQ(csv.code, 0) << csv.err;
  EXPECT_TRUE(csv.out.empty());
  const auto rows = read_csv_rows(slurp(out));
  EXPECT_EQ(rows.size(), 20u);
  EXPECT_NE(rows[1].at("ci_lo"), "NA");
  EXPECT_NE(slurp(svg).find("<svg"), std::string::npos);
}

TEST(Cli, SweepExplicitAndStable) {
  Workdir w;
  const auto r = w.run("sweep --delta-itt -0.761 --mu-h 0.814 --gamma-grid 0,0.5,1");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rows = read_csv_rows(r.out);
  ASSERT_EQ(rows.size(), 303u);
  EXPECT_EQ(rows[0].at("se"), "NA");
  const auto data = w.write("d.csv", random_csv(5));
  const std::string args = "sweep --data '" + data.string() + "' --bootstrap 40 --seed 3 --a-grid 11";
  const auto first = w.run(args), second = w.run(args);
  ASSERT_EQ(first.code, 0) << first.err;
  EXPECT_EQ(first.out, second.out);
  EXPECT_EQ(read_csv_rows(first.out).size(), 55u);
}

TEST(Cli, ExitCodes) {
  Workdir w;
  const auto good = w.write("d.csv", random_csv(6));
  EXPECT_EQ(w.run("--help").code, 0);
  EXPECT_EQ(w.run("analyze").code, 2);
  EXPECT_EQ(w.run("analyze --data '" + good.string() + "' --itt maybe").code, 2);
  const auto bad = w.write("bad.csv", "z,a,y\n0,0.3,9\n1,0.5,8\n");
  const auto r = w.run("analyze --data '" + bad.string() + "'");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("row 1"), std::string::npos);
  EXPECT_EQ(w.run("analyze --data '" + good.string() + "' --gamma-grid 1.5").code, 2);
  const auto one_control = w.write("one.csv", "z,a,y\n0,0,9\n1,0.5,8\n1,0.7,7\n");
  EXPECT_EQ(w.run("analyze --data '" + one_control.string() + "' --bootstrap 0").code, 3);
  EXPECT_EQ(w.run("analyze --data '" + w.path("missing.csv").string() + "'").code, 4);
  EXPECT_EQ(w.run("analyze --data '" + good.string() + "' --bootstrap 0 --out /nonexistent/dir/x.json").code, 4);
  const auto conflict = w.run("sweep --data '" + good.string() + "' --delta-itt 1 --mu-h 0.5");
  EXPECT_EQ(conflict.code, 2);
  EXPECT_NE(conflict.err.find("ConflictingInputs"), std::string::npos);
  EXPECT_EQ(w.run("sweep --delta-itt 1").code, 2);
}

TEST(Cli, SimulateWarnsForTinyK) {
  Workdir w;
  const auto r = w.run(std::string("simulate --scenario '") + LATE_BOUNDS_SCENARIO_DIR +
                       "/t2_g050_mid_n250.txt' --k 2 --b 0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.err.find("warning"), std::string::npos);
  const json s = json::parse(r.out);
  EXPECT_EQ(s["k"], 2);
  EXPECT_EQ(s["rows"].size(), 3u);
  EXPECT_EQ(s["rows"][0]["label"], "itt");
}

TEST(Cli, SimulateMissingKey) {
  Workdir w;
  std::string text = slurp(std::string(LATE_BOUNDS_SCENARIO_DIR) + "/t2_g050_mid_n250.txt");
  text.replace(text.find("sigma_y = 0.8\n"), 14, "");
  const auto sc = w.write("s.txt", text);
  const auto r = w.run("simulate --scenario '" + sc.string() + "' --k 2 --b 0");
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("sigma_y"), std::string::npos);
}
