#pragma once

// Monotone engagement transforms h:[0,1] -> [0,1] with h(0) = 0, h(1) = 1.
//
// Three families are supported:
//   identity            h(a) = a
//   threshold(zeta)     h(a) = 1 if a > zeta else 0   (strict inequality)
//   table(points)       piecewise-linear through (a, h) pairs
//
// A TransformSpec is an unchecked description; validate() turns it into a
// Transform, which is the only type the estimators accept.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "late_bounds/error.hpp"

namespace late_bounds {

class TransformSpec {
 public:
  enum class Kind { Identity, Threshold, Table };
  using Point = std::pair<double, double>;

  static TransformSpec identity() { return TransformSpec(Kind::Identity, 0.0, {}); }
  static TransformSpec threshold(double zeta) { return TransformSpec(Kind::Threshold, zeta, {}); }
  static TransformSpec table(std::vector<Point> points) {
    return TransformSpec(Kind::Table, 0.0, std::move(points));
  }

  Kind kind() const noexcept { return kind_; }
  double zeta() const noexcept { return zeta_; }
  const std::vector<Point>& points() const noexcept { return points_; }

  std::string describe() const {
    switch (kind_) {
      case Kind::Identity: return "identity";
      case Kind::Threshold: {
        std::ostringstream os;
        os << "threshold:" << zeta_;
        return os.str();
      }
      case Kind::Table: return "table(" + std::to_string(points_.size()) + " points)";
    }
    return "unknown";
  }

  friend bool operator==(const TransformSpec&, const TransformSpec&) = default;

 private:
  TransformSpec(Kind k, double zeta, std::vector<Point> pts)
      : kind_(k), zeta_(zeta), points_(std::move(pts)) {}

  Kind kind_;
  double zeta_;
  std::vector<Point> points_;
};

namespace detail {

inline double evaluate_unchecked(const TransformSpec& spec, double a) {
  switch (spec.kind()) {
    case TransformSpec::Kind::Identity:
      return a;
    case TransformSpec::Kind::Threshold:
      return a > spec.zeta() ? 1.0 : 0.0;
    case TransformSpec::Kind::Table: {
      const auto& pts = spec.points();
      if (a <= pts.front().first) return pts.front().second;
      if (a >= pts.back().first) return pts.back().second;
      auto hi = std::upper_bound(pts.begin(), pts.end(), a,
                                 [](double v, const TransformSpec::Point& p) { return v < p.first; });
      auto lo = std::prev(hi);
      const double t = (a - lo->first) / (hi->first - lo->first);
      return lo->second + t * (hi->second - lo->second);
    }
  }
  return a;
}

}  // namespace detail

/// A transform whose endpoint and monotonicity conditions have been checked.
class Transform {
 public:
  /// Number of equispaced points used for the monotonicity scan.
  static constexpr std::size_t kCheckGrid = 1001;

  const TransformSpec& spec() const noexcept { return spec_; }
  TransformSpec::Kind kind() const noexcept { return spec_.kind(); }

  /// h(a). Throws DomainError outside [0,1].
  double operator()(double a) const {
    if (!(a >= 0.0 && a <= 1.0)) {
      throw Error(Errc::DomainError, "engagement " + std::to_string(a) + " outside [0,1]");
    }
    return detail::evaluate_unchecked(spec_, a);
  }

  /// True for transforms with a unique inverse on the set where h is
  /// strictly increasing (identity and tables).
  bool invertible() const noexcept { return spec_.kind() != TransformSpec::Kind::Threshold; }

  /// Smallest a in [0,1] with h(a) >= target. For the threshold family the
  /// answer is zeta for every target in (0,1] and carries no uniqueness.
  std::optional<double> lower_inverse(double target) const {
    if (target <= 0.0) return 0.0;
    if (target > 1.0) return std::nullopt;
    switch (spec_.kind()) {
      case TransformSpec::Kind::Identity:
        return target;
      case TransformSpec::Kind::Threshold:
        return spec_.zeta();
      case TransformSpec::Kind::Table: {
        const auto& pts = spec_.points();
        for (std::size_t i = 1; i < pts.size(); ++i) {
          const auto& [a0, h0] = pts[i - 1];
          const auto& [a1, h1] = pts[i];
          if (h1 >= target) {
            if (h1 == h0) return a0;
            return a0 + (target - h0) / (h1 - h0) * (a1 - a0);
          }
        }
        return 1.0;
      }
    }
    return std::nullopt;
  }

  friend Transform validate(TransformSpec spec);
  friend bool operator==(const Transform&, const Transform&) = default;

 private:
  explicit Transform(TransformSpec s) : spec_(std::move(s)) {}
  TransformSpec spec_;
};

/// Checks h(0) = 0, h(1) = 1 and monotonicity on a 1001-point grid.
inline Transform validate(TransformSpec spec) {
  using Kind = TransformSpec::Kind;
  if (spec.kind() == Kind::Threshold) {
    const double z = spec.zeta();
    if (!(z > 0.0 && z < 1.0)) {
      throw Error(Errc::DomainError, "threshold zeta must lie strictly inside (0,1)");
    }
  }
  if (spec.kind() == Kind::Table) {
    const auto& pts = spec.points();
    if (pts.size() < 2) throw Error(Errc::EndpointViolation, "table needs points at a=0 and a=1");
    for (std::size_t i = 0; i < pts.size(); ++i) {
      const auto& [a, h] = pts[i];
      if (!std::isfinite(a) || !std::isfinite(h) || a < 0.0 || a > 1.0) {
        throw Error(Errc::DomainError, "table point " + std::to_string(i) + " outside [0,1]");
      }
      if (i > 0 && !(a > pts[i - 1].first)) {
        throw Error(Errc::DomainError, "table abscissae must be strictly ascending");
      }
    }
    if (pts.front().first != 0.0 || pts.back().first != 1.0) {
      throw Error(Errc::EndpointViolation, "table must span a=0 to a=1");
    }
  }

  const double h0 = detail::evaluate_unchecked(spec, 0.0);
  const double h1 = detail::evaluate_unchecked(spec, 1.0);
  if (h0 != 0.0) throw Error(Errc::EndpointViolation, "h(0) = " + std::to_string(h0) + ", expected 0");
  if (h1 != 1.0) throw Error(Errc::EndpointViolation, "h(1) = " + std::to_string(h1) + ", expected 1");

  double prev = h0;
  for (std::size_t i = 1; i < Transform::kCheckGrid; ++i) {
    const double a = static_cast<double>(i) / static_cast<double>(Transform::kCheckGrid - 1);
    const double h = detail::evaluate_unchecked(spec, a);
    if (h < prev) {
      throw Error(Errc::MonotonicityViolation, "h decreases near a = " + std::to_string(a));
    }
    prev = h;
  }
  // Knot values too: a narrow dip can fall between grid points.
  if (spec.kind() == Kind::Table) {
    const auto& pts = spec.points();
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].second < pts[i - 1].second) {
        throw Error(Errc::MonotonicityViolation,
                    "h decreases between a = " + std::to_string(pts[i - 1].first) + " and " +
                        std::to_string(pts[i].first));
      }
    }
  }
  return Transform(std::move(spec));
}

inline double apply(const Transform& h, double a) { return h(a); }

/// Reads a two-column CSV (a,h). A non-numeric first line is taken as a header.
inline TransformSpec read_transform_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::IoError, "cannot open transform table '" + path + "'");
  std::vector<TransformSpec::Point> pts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) {
      throw Error(Errc::ParseError, path + ":" + std::to_string(lineno) + ": expected 'a,h'");
    }
    try {
      const double a = std::stod(line.substr(0, comma));
      const double h = std::stod(line.substr(comma + 1));
      pts.emplace_back(a, h);
    } catch (const std::logic_error&) {
      if (lineno == 1 && pts.empty()) continue;  // header
      throw Error(Errc::ParseError, path + ":" + std::to_string(lineno) + ": non-numeric value");
    }
  }
  return TransformSpec::table(std::move(pts));
}

/// Parses the CLI syntax: `identity`, `threshold:ZETA`, `table:PATH`.
inline TransformSpec parse_transform(std::string_view text) {
  if (text == "identity") return TransformSpec::identity();
  const auto colon = text.find(':');
  if (colon != std::string_view::npos) {
    const std::string_view head = text.substr(0, colon);
    const std::string tail(text.substr(colon + 1));
    if (head == "threshold") {
      try {
        std::size_t used = 0;
        const double z = std::stod(tail, &used);
        if (used != tail.size()) throw std::invalid_argument("trailing");
        return TransformSpec::threshold(z);
      } catch (const std::logic_error&) {
        throw Error(Errc::ParseError, "bad threshold value '" + tail + "'");
      }
    }
    if (head == "table") return read_transform_table(tail);
  }
  throw Error(Errc::ParseError, "unknown transform '" + std::string(text) +
                                    "' (expected identity, threshold:Z or table:PATH)");
}

}  // namespace late_bounds
