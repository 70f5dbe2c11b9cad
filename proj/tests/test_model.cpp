#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <random>

#include "late_bounds/estimators.hpp"
#include "late_bounds/model.hpp"
#include "support.hpp"

namespace lb = late_bounds;
using testing_support::random_dataset;

namespace {

lb::Errc code_of(const std::vector<lb::RawRow>& raw, std::vector<std::string> names = {}) {
  try {
    (void)lb::validate_dataset(raw, std::move(names));
  } catch (const lb::Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected a validation error";
  return lb::Errc::IoError;
}

}  // namespace

TEST(ValidateDataset, MinimalTwoRows) {
  const std::vector<lb::RawRow> raw{{0, 0.0, 9.0, {}}, {1, 0.8, 8.0, {}}};
  const auto ds = lb::validate_dataset(raw, {});
  EXPECT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.n_control(), 1u);
  EXPECT_EQ(ds.n_treated(), 1u);
}

TEST(ValidateDataset, ControlEngagementRejected) {
  EXPECT_EQ(code_of({{0, 0.3, 9.0, {}}, {1, 0.8, 8.0, {}}}), lb::Errc::ControlEngagement);
}

TEST(ValidateDataset, ReachShapedArms) {
  std::vector<lb::RawRow> raw;
  for (int i = 0; i < 106; ++i) raw.push_back({0, std::nullopt, 9.0 + 0.01 * i, {}});
  for (int i = 0; i < 109; ++i) raw.push_back({1, (i % 10) / 9.0, 8.5 + 0.01 * i, {}});
  const auto ds = lb::validate_dataset(raw, {});
  EXPECT_EQ(ds.n_control(), 106u);
  EXPECT_EQ(ds.n_treated(), 109u);
}

TEST(ValidateDataset, MissingControlEngagementBecomesZero) {
  const auto ds = lb::validate_dataset(std::vector<lb::RawRow>{{0, std::nullopt, 9.0, {}}, {1, 0.4, 8.0, {}}}, {});
  EXPECT_EQ(ds.rows()[0].a, 0.0);
}

TEST(ValidateDataset, ErrorKinds) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {}}, {0, 0.0, 8.0, {}}}), lb::Errc::EmptyArm);
  EXPECT_EQ(code_of({{1, 0.5, 9.0, {}}}), lb::Errc::EmptyArm);
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {}}, {1, 1.2, 8.0, {}}}), lb::Errc::OutOfRangeEngagement);
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {}}, {1, -0.1, 8.0, {}}}), lb::Errc::OutOfRangeEngagement);
  EXPECT_EQ(code_of({{0, 0.0, nan, {}}, {1, 0.5, 8.0, {}}}), lb::Errc::NonFiniteOutcome);
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {}}, {1, 0.0, 8.0, {}}}), lb::Errc::ZeroInstrument);
  EXPECT_EQ(code_of({{2, 0.0, 9.0, {}}, {1, 0.5, 8.0, {}}}), lb::Errc::InvalidArm);
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {}}, {1, std::nullopt, 8.0, {}}}), lb::Errc::MissingValue);
  EXPECT_EQ(code_of({{0, 0.0, 9.0, {1.0}}, {1, 0.5, 8.0, {}}}, {"x"}), lb::Errc::CovariateArity);
}

TEST(ValidateDataset, ErrorsAreValidationCategory) {
  try {
    (void)lb::validate_dataset(std::vector<lb::RawRow>{{0, 0.3, 9.0, {}}, {1, 0.8, 8.0, {}}}, {});
    FAIL();
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.category(), lb::ErrorCategory::Validation);
    EXPECT_NE(std::string(e.what()).find("row 1"), std::string::npos);
  }
}

TEST(ValidateDatasetProperty, Idempotent) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 200; ++trial) {
    const auto ds = random_dataset(rng, {1, 30, static_cast<std::size_t>(trial % 3), 0.3});
    EXPECT_EQ(lb::validate_dataset(ds), ds);
  }
}

TEST(ValidateDatasetProperty, ValidDataMeetsEstimatorPreconditions) {
  // Estimator variances need two rows per arm; generate at that floor.
  std::mt19937_64 rng(202);
  const auto identity = lb::validate(lb::TransformSpec::identity());
  for (int trial = 0; trial < 300; ++trial) {
    const auto ds = random_dataset(rng, {2, 25, 0, 0.4});
    EXPECT_NO_THROW({
      (void)lb::itt_diff_means(ds);
      (void)lb::itt_ols(ds, {});
      (void)lb::mu_h_estimate(ds, identity);
    });
  }
}

TEST(GammaValue, Bounds) {
  EXPECT_NO_THROW(lb::GammaValue(0.0));
  EXPECT_NO_THROW(lb::GammaValue(1.0));
  EXPECT_THROW(lb::GammaValue(-1e-12), lb::Error);
  EXPECT_THROW(lb::GammaValue(1.0000001), lb::Error);
  EXPECT_THROW(lb::GammaValue(std::nan("")), lb::Error);
}

TEST(AnalysisConfig, Defaults) {
  lb::AnalysisConfig cfg;
  ASSERT_EQ(cfg.gamma_grid.size(), 5u);
  EXPECT_EQ(cfg.gamma_grid[1].value(), 0.25);
  EXPECT_EQ(cfg.bootstrap_reps, 500);
  EXPECT_EQ(cfg.ci_level, 0.95);
  EXPECT_TRUE(cfg.include_mean_engagement);
  EXPECT_NO_THROW(cfg.validate());
}

TEST(AnalysisConfig, Rejections) {
  lb::AnalysisConfig cfg;
  cfg.bootstrap_reps = 1;
  EXPECT_THROW(cfg.validate(), lb::Error);
  cfg = {};
  cfg.a_grid = {1.5};
  EXPECT_THROW(cfg.validate(), lb::Error);
  cfg = {};
  cfg.ci_level = 1.0;
  EXPECT_THROW(cfg.validate(), lb::Error);
  cfg = {};
  cfg.adjustment.linear = {"x"};
  EXPECT_THROW(cfg.validate(), lb::Error);
  cfg.itt_method = lb::IttMethod::OlsAdjusted;
  EXPECT_NO_THROW(cfg.validate());
}

TEST(Resample, DegenerateDrawsThrow) {
  const auto ds = testing_support::make_data({9, 9.5}, {0.0, 0.6}, {8, 8.5});
  const std::vector<std::size_t> controls{0, 1, 0, 1};
  EXPECT_THROW((void)ds.resample(controls), lb::Error);
  // indices 2 is treated with a = 0
  const std::vector<std::size_t> no_engaged{0, 2, 2, 1};
  try {
    (void)ds.resample(no_engaged);
    FAIL();
  } catch (const lb::Error& e) {
    EXPECT_EQ(e.code(), lb::Errc::ZeroInstrument);
  }
  const std::vector<std::size_t> ok{0, 3, 3, 1};
  EXPECT_EQ(ds.resample(ok).n_treated(), 2u);
}
