#pragma once

// Hand-rolled generators for property tests.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "late_bounds/model.hpp"

namespace testing_support {

namespace lb = late_bounds;

inline lb::TrialDataset make_data(const std::vector<double>& y0, const std::vector<double>& a1,
                                  const std::vector<double>& y1) {
  std::vector<lb::RawRow> raw;
  for (double y : y0) raw.push_back({0.0, 0.0, y, {}});
  for (std::size_t i = 0; i < y1.size(); ++i) raw.push_back({1.0, a1[i], y1[i], {}});
  return lb::validate_dataset(raw, {});
}

struct GenOptions {
  std::size_t min_arm = 2;
  std::size_t max_arm = 60;
  std::size_t covariates = 0;
  /// Probability an engagement value sits exactly at 0 or 1.
  double p_mass = 0.2;
};

/// Random valid dataset: both arms >= min_arm rows, mixed engagement with
/// point masses, at least one engaged treated row.
inline lb::TrialDataset random_dataset(std::mt19937_64& rng, const GenOptions& opt = {}) {
  std::uniform_int_distribution<std::size_t> arm(opt.min_arm, opt.max_arm);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t n0 = arm(rng);
  const std::size_t n1 = arm(rng);
  const double effect = 3.0 * (unif(rng) - 0.5);

  std::vector<lb::RawRow> raw;
  std::vector<std::string> names;
  for (std::size_t j = 0; j < opt.covariates; ++j) names.push_back("x" + std::to_string(j));
  const auto covs = [&] {
    std::vector<double> c;
    for (std::size_t j = 0; j < opt.covariates; ++j) c.push_back(noise(rng));
    return c;
  };
  for (std::size_t i = 0; i < n0; ++i) {
    auto c = covs();
    const double y = 9.0 + noise(rng) + (c.empty() ? 0.0 : 0.5 * c[0]);
    raw.push_back({0.0, unif(rng) < 0.5 ? std::optional<double>(0.0) : std::nullopt, y, c});
  }
  for (std::size_t i = 0; i < n1; ++i) {
    double a = unif(rng);
    const double m = unif(rng);
    if (m < opt.p_mass / 2) a = 0.0;
    else if (m < opt.p_mass) a = 1.0;
    if (i == 0 && a == 0.0) a = 0.5;
    auto c = covs();
    const double y = 9.0 + effect * a + noise(rng) + (c.empty() ? 0.0 : 0.5 * c[0]);
    raw.push_back({1.0, a, y, c});
  }
  std::shuffle(raw.begin(), raw.end(), rng);
  return lb::validate_dataset(raw, names);
}

}  // namespace testing_support
