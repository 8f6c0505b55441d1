#pragma once

#include "cgmot/types.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace cgmot {

struct ExperimentConfig {
  enum class Scenario { synthetic_line, grid_mape };
  Scenario scenario = Scenario::synthetic_line;

  // synthetic_line: a = (F, 0, ..., 0), b = (0, ..., 0, F) on a line of cells.
  Index cells = 10;
  double mass = 100;
  double line_q = 1;
  std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};

  // grid_mape
  Index rows = 14;
  Index cols = 14;
  double population = 1e5;
  /// Rate of the generating chain; one hour advances it by half a time unit.
  double generator_q = 0.1;
  std::vector<double> interpolation_q{0.1, 1.0};
  int first_hour = 0;
  int last_hour = 23;
  int days = 1;
  /// Sigma of the multiplicative log-normal observation noise (0 = noiseless).
  double noise_sigma = 0.01;
  /// Debug: score the truth against itself.
  bool inject_truth = false;

  /// Output directory; nothing is written when empty.
  std::filesystem::path out_dir;
  std::uint64_t seed = 1;
  SolverOptions solver{};

  void validate() const;
};

struct LineRow {
  double t = 0;
  std::string method;  ///< proposed, wb_eps0, wb_eps1
  /// Empty for the non-unique epsilon = 0 barycenter at t = 1/2.
  std::optional<Vector<double>> values;
};

struct LineTable {
  std::vector<LineRow> rows;
  /// t, method, note, c1..cn; the note column carries "non-unique".
  std::string tsv() const;
};

/// CTMC interpolation plus the closed-form barycenters at each configured t;
/// writes synthetic_line.tsv when out_dir is set.
LineTable run_synthetic_line(const ExperimentConfig& config);

/// Hourly grid histograms, [day][hour - first_hour]. The population starts
/// from a seeded random field and moves under the grid chain with rate
/// generator_q; each observation is the latent histogram times independent
/// log-normal factors, rescaled to the population.
std::vector<std::vector<Histogram<double>>> generate_grid_days(const ExperimentConfig& config);

struct MapeRecord {
  std::string method;
  int day = 0;
  int hour = 0;
  double mape = 0;
  Index excluded = 0;
  int iterations = 0;
  bool converged = true;
};

struct ZoneSummary {
  std::string method;
  std::string zone;  ///< "All" or "a-b"
  double mean = 0;
  /// Sample standard deviation; 0 for a single record.
  double stddev = 0;
  std::size_t count = 0;
};

struct GridMapeResult {
  std::vector<MapeRecord> records;
  std::vector<ZoneSummary> summary;
  /// Methods in the order they were run.
  std::vector<std::string> methods;

  const ZoneSummary& find(const std::string& method, const std::string& zone) const;
  std::string summary_tsv() const;
  std::string records_tsv() const;
};

/// Interpolates every interior hour from its neighbours at t = 1/2 with each
/// configured q and scores it by MAPE. Methods are labelled "proposed(q=...)"
/// plus the "midpoint" baseline (a + b) / 2. Zones follow the hour blocks
/// 1-3, 4-7, 8-11, 12-15, 16-19, 20-22 and "All". Writes grid_mape_summary.tsv
/// and grid_mape_records.tsv when out_dir is set.
GridMapeResult run_grid_mape(const ExperimentConfig& config);

}  // namespace cgmot
