#include "cgmot/experiments.hpp"
#include "cgmot/io.hpp"

#include <gtest/gtest.h>

#include <unistd.h>

using namespace cgmot;

namespace {

ExperimentConfig small_grid() {
  ExperimentConfig c;
  c.scenario = ExperimentConfig::Scenario::grid_mape;
  c.rows = 6;
  c.cols = 6;
  c.population = 1e4;
  c.first_hour = 0;
  c.last_hour = 8;
  return c;
}

const LineRow& row(const LineTable& t, double time, const std::string& method) {
  for (const auto& r : t.rows)
    if (r.t == time && r.method == method) return r;
  throw std::runtime_error("row not found");
}

}  // namespace

TEST(SyntheticLine, Rows) {
  ExperimentConfig c;
  const auto t = run_synthetic_line(c);
  EXPECT_EQ(t.rows.size(), 15u);
  const auto& p0 = *row(t, 0.0, "proposed").values;
  EXPECT_NEAR(p0[0], 100, 1e-6);
  EXPECT_NEAR((*row(t, 1.0, "proposed").values)[9], 100, 1e-6);
  const auto& mid = *row(t, 0.5, "proposed").values;
  for (Index i = 0; i < 10; ++i) EXPECT_NEAR(mid[i], mid[9 - i], 1e-8);
  EXPECT_FALSE(row(t, 0.5, "wb_eps0").values);
  EXPECT_GT(std::abs((*row(t, 0.0, "wb_eps1").values)[0] - 100), 1.0);
  const auto tsv = t.tsv();
  EXPECT_EQ(tsv.rfind("t\tmethod\tnote\tc1", 0), 0u);
  EXPECT_NE(tsv.find("non-unique"), std::string::npos);
}

TEST(SyntheticLine, WritesFile) {
  ExperimentConfig c;
  c.times = {0.5};
  c.out_dir = std::filesystem::temp_directory_path() / ("cgmot_line_" + std::to_string(::getpid()));
  run_synthetic_line(c);
  EXPECT_TRUE(std::filesystem::exists(c.out_dir / "synthetic_line.tsv"));
  std::filesystem::remove_all(c.out_dir);
}

TEST(Config, Validation) {
  auto c = small_grid();
  c.first_hour = 5;
  c.last_hour = 6;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_grid();
  c.last_hour = 24;
  EXPECT_THROW(run_grid_mape(c), ConfigError);
  c = small_grid();
  c.interpolation_q = {};
  EXPECT_THROW(c.validate(), ConfigError);
  ExperimentConfig l;
  l.times = {1.5};
  EXPECT_THROW(run_synthetic_line(l), ConfigError);
}

TEST(GridData, DeterministicForSeed) {
  const auto c = small_grid();
  const auto x = generate_grid_days(c), y = generate_grid_days(c);
  ASSERT_EQ(x.size(), 1u);
  ASSERT_EQ(x[0].size(), 9u);
  for (std::size_t h = 0; h < 9; ++h) {
    EXPECT_EQ(x[0][h].values(), y[0][h].values());
    EXPECT_NEAR(x[0][h].mass(), 1e4, 1e-6);
  }
  auto d = c;
  d.seed = 2;
  EXPECT_NE(generate_grid_days(d)[0][0].values(), x[0][0].values());
}

TEST(GridMape, InjectTruthIsZero) {
  auto c = small_grid();
  c.inject_truth = true;
  const auto r = run_grid_mape(c);
  for (const auto& rec : r.records) EXPECT_EQ(rec.mape, 0.0);
}

TEST(GridMape, MatchedRateWins) {
  const auto r = run_grid_mape(small_grid());
  ASSERT_EQ(r.methods.size(), 3u);
  const auto& matched = r.find(r.methods[0], "All");
  const auto& mismatched = r.find(r.methods[1], "All");
  EXPECT_EQ(matched.count, 7u);
  EXPECT_LT(matched.mean, mismatched.mean);
  for (const auto& rec : r.records) EXPECT_TRUE(rec.converged);
  EXPECT_NE(r.summary_tsv().find("midpoint"), std::string::npos);
  EXPECT_THROW(r.find("nope", "All"), std::exception);
}
