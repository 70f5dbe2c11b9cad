#pragma once

// Long-format sensitivity sweeps over (gamma, a) for external plotting, and
// a small static SVG rendering: Delta(a) against a per gamma, and Delta(0),
// Delta(1) against gamma.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <iomanip>
#include <limits>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "late_bounds/error.hpp"
#include "late_bounds/late.hpp"
#include "late_bounds/model.hpp"
#include "late_bounds/report.hpp"
#include "late_bounds/transform.hpp"

namespace late_bounds {

struct SweepRow {
  double gamma = 0.0;
  double a = 0.0;
  double h_a = 0.0;
  double delta = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  std::optional<double> se;
  std::optional<double> ci_lo;
  std::optional<double> ci_hi;
};

/// `count` equispaced points on [0,1].
inline std::vector<double> uniform_grid(std::size_t count) {
  if (count < 2) throw Error(Errc::InvalidConfig, "grid needs at least 2 points");
  std::vector<double> g(count);
  for (std::size_t i = 0; i < count; ++i) g[i] = static_cast<double>(i) / static_cast<double>(count - 1);
  return g;
}

/// Sweep from an explicit (Delta_ITT, mu_h) pair; no uncertainty columns.
inline std::vector<SweepRow> sweep_explicit(double delta_itt, double mu_h, std::vector<double> gammas,
                                            std::vector<double> a_grid, const Transform& h) {
  if (!(mu_h > 0.0 && mu_h <= 1.0)) throw Error(Errc::ZeroInstrument, "mu_h must lie in (0,1]");
  std::sort(gammas.begin(), gammas.end());
  std::sort(a_grid.begin(), a_grid.end());
  IttEstimate itt;
  itt.delta_itt = delta_itt;
  MuHEstimate mu;
  mu.mu_h = mu_h;
  std::vector<SweepRow> rows;
  rows.reserve(gammas.size() * a_grid.size());
  for (double g : gammas) {
    for (double a : a_grid) {
      const LatePoint p = late_estimate(itt, mu, GammaValue(g), h, a);
      rows.push_back({p.gamma, p.a, p.h_a, p.delta, p.lower_bound, p.upper_bound, {}, {}, {}});
    }
  }
  return rows;
}

/// Sweep rows from a dataset analysis, sorted by (gamma, a).
inline std::vector<SweepRow> sweep_from_report(const AnalysisReport& r) {
  std::vector<SweepRow> rows;
  rows.reserve(r.grid.size());
  for (const GridCell& c : r.grid) {
    SweepRow row{c.point.gamma, c.point.a, c.point.h_a, c.point.delta, c.point.lower_bound, c.point.upper_bound,
                 c.variance.se_late, {}, {}};
    if (c.ci) {
      row.ci_lo = c.ci->lower;
      row.ci_hi = c.ci->upper;
    }
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const SweepRow& x, const SweepRow& y) {
    return x.gamma != y.gamma ? x.gamma < y.gamma : x.a < y.a;
  });
  return rows;
}

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  const auto num = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  const auto opt = [&](const std::optional<double>& v) { return v ? num(*v) : std::string("NA"); };
  os << "gamma,a,h_a,delta,lower,upper,se,ci_lo,ci_hi\n";
  for (const auto& r : rows) {
    os << num(r.gamma) << ',' << num(r.a) << ',' << num(r.h_a) << ',' << num(r.delta) << ',' << num(r.lower) << ','
       << num(r.upper) << ',' << opt(r.se) << ',' << opt(r.ci_lo) << ',' << opt(r.ci_hi) << '\n';
  }
}

// ---------------------------------------------------------------------------
// SVG

namespace detail {

struct Panel {
  double x0, y0, w, h;        // pixel frame
  double xmin, xmax, ymin, ymax;
  double px(double x) const { return x0 + (x - xmin) / (xmax - xmin) * w; }
  double py(double y) const { return y0 + h - (y - ymin) / (ymax - ymin) * h; }
};

inline std::string fmt2(double v) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(2) << v;
  return s.str();
}

inline void draw_axes(std::ostream& os, const Panel& p, const std::string& xlabel, const std::string& ylabel,
                      const std::string& title) {
  os << "<rect x='" << p.x0 << "' y='" << p.y0 << "' width='" << p.w << "' height='" << p.h
     << "' fill='none' stroke='#444'/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double xv = p.xmin + (p.xmax - p.xmin) * i / 4.0;
    const double yv = p.ymin + (p.ymax - p.ymin) * i / 4.0;
    os << "<text x='" << p.px(xv) << "' y='" << p.y0 + p.h + 16 << "' font-size='11' text-anchor='middle'>"
       << fmt2(xv) << "</text>\n";
    os << "<text x='" << p.x0 - 6 << "' y='" << p.py(yv) + 4 << "' font-size='11' text-anchor='end'>" << fmt2(yv)
       << "</text>\n";
  }
  os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 + p.h + 34 << "' font-size='12' text-anchor='middle'>"
     << xlabel << "</text>\n";
  os << "<text x='" << p.x0 - 44 << "' y='" << p.y0 + p.h / 2 << "' font-size='12' text-anchor='middle' transform='rotate(-90 "
     << p.x0 - 44 << ' ' << p.y0 + p.h / 2 << ")'>" << ylabel << "</text>\n";
  os << "<text x='" << p.x0 + p.w / 2 << "' y='" << p.y0 - 8 << "' font-size='13' text-anchor='middle'>" << title
     << "</text>\n";
}

inline void polyline(std::ostream& os, const Panel& p, const std::vector<std::pair<double, double>>& pts,
                     const std::string& colour, const std::string& dash = "") {
  os << "<polyline fill='none' stroke='" << colour << "' stroke-width='1.5'";
  if (!dash.empty()) os << " stroke-dasharray='" << dash << "'";
  os << " points='";
  for (const auto& [x, y] : pts) os << p.px(x) << ',' << p.py(y) << ' ';
  os << "'/>\n";
}

}  // namespace detail

/// Two panels: Delta(a) vs a for each gamma (with the bound envelope), and
/// Delta(0), Delta(1) vs gamma. Rows must come from a full gamma x a sweep.
inline void write_sweep_svg(std::ostream& os, const std::vector<SweepRow>& rows) {
  if (rows.empty()) throw Error(Errc::InvalidConfig, "nothing to plot");
  std::vector<double> gammas;
  for (const auto& r : rows)
    if (std::find(gammas.begin(), gammas.end(), r.gamma) == gammas.end()) gammas.push_back(r.gamma);

  double ymin = std::numeric_limits<double>::infinity();
  double ymax = -ymin;
  for (const auto& r : rows) {
    ymin = std::min({ymin, r.delta, r.lower});
    ymax = std::max({ymax, r.delta, r.upper});
  }
  ymin = std::min(ymin, 0.0);
  ymax = std::max(ymax, 0.0);
  if (ymax - ymin < 1e-12) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double pad = 0.05 * (ymax - ymin);
  ymin -= pad;
  ymax += pad;

  const char* palette[] = {"#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6a4c93", "#00798c", "#8c564b"};
  os << "<svg xmlns='http://www.w3.org/2000/svg' width='980' height='420' font-family='sans-serif'>\n";
  os << "<rect width='100%' height='100%' fill='white'/>\n";

  const detail::Panel left{70, 40, 380, 300, 0.0, 1.0, ymin, ymax};
  detail::draw_axes(os, left, "engagement a", "effect", "Effect by engagement");
  // Envelope from the gamma-independent bounds.
  std::vector<std::pair<double, double>> lo, hi;
  for (const auto& r : rows) {
    if (r.gamma != gammas.front()) continue;
    lo.emplace_back(r.a, r.lower);
    hi.emplace_back(r.a, r.upper);
  }
  detail::polyline(os, left, lo, "#999", "4 3");
  detail::polyline(os, left, hi, "#999", "4 3");
  for (std::size_t gi = 0; gi < gammas.size(); ++gi) {
    std::vector<std::pair<double, double>> pts;
    for (const auto& r : rows)
      if (r.gamma == gammas[gi]) pts.emplace_back(r.a, r.delta);
    const std::string colour = palette[gi % 7];
    detail::polyline(os, left, pts, colour);
    os << "<text x='" << left.x0 + left.w + 8 << "' y='" << left.y0 + 14 + 16 * gi << "' font-size='11' fill='"
       << colour << "'>gamma " << detail::fmt2(gammas[gi]) << "</text>\n";
  }

  const detail::Panel right{560, 40, 380, 300, 0.0, 1.0, ymin, ymax};
  detail::draw_axes(os, right, "gamma", "effect", "Endpoints by gamma");
  std::vector<std::pair<double, double>> at0, at1;
  for (const auto& r : rows) {
    if (r.a == 0.0) at0.emplace_back(r.gamma, r.delta);
    if (r.a == 1.0) at1.emplace_back(r.gamma, r.delta);
  }
  if (at0.size() > 1) detail::polyline(os, right, at0, palette[0]);
  if (at1.size() > 1) detail::polyline(os, right, at1, palette[1]);
  os << "<text x='" << right.x0 + 8 << "' y='" << right.y0 + 14 << "' font-size='11' fill='" << palette[0]
     << "'>Delta(0)</text>\n";
  os << "<text x='" << right.x0 + 8 << "' y='" << right.y0 + 30 << "' font-size='11' fill='" << palette[1]
     << "'>Delta(1)</text>\n";
  os << "</svg>\n";
}

}  // namespace late_bounds
