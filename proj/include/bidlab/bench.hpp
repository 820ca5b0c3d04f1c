#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bidlab/controllers.hpp"
#include "bidlab/landscape.hpp"
#include "bidlab/market_sim.hpp"
#include "bidlab/training.hpp"

namespace bidlab {

// Aggregate episode statistics for one experiment cell. std_cost uses the
// population convention (n divisor); shortfall counts strictly missed goals.
struct Metrics {
  std::string experiment;
  std::string cell;
  double mean_cost = 0.0;
  double std_cost = 0.0;
  double shortfall_prob = 0.0;
  double mean_spend = 0.0;
  double mean_penalty = 0.0;
  int n = 0;
};

Metrics compute_metrics(std::string experiment, std::string cell,
                        std::span<const EpisodeTrace> traces);
void save_report(const std::filesystem::path& p,
                 std::span<const Metrics> rows);

struct BootstrapCi {
  double point = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Percentile bootstrap (2.5/97.5) with B resamples.
BootstrapCi bootstrap_mean(std::span<const double> v, int b,
                           std::uint64_t seed);
// Mean of a[i] - b[i], resampling pairs.
BootstrapCi bootstrap_paired_diff(std::span<const double> a,
                                  std::span<const double> b, int n_resamples,
                                  std::uint64_t seed);
// mean(a) / mean(b), resampling pairs.
BootstrapCi bootstrap_paired_ratio(std::span<const double> a,
                                   std::span<const double> b,
                                   int n_resamples, std::uint64_t seed);

struct ComparisonRow {
  std::string experiment;
  std::string comparison;
  BootstrapCi ci;
};
void save_comparisons(const std::filesystem::path& p,
                      std::span<const ComparisonRow> rows);

// ---------------------------------------------------------------------
// Synthetic single-placement world: one lognormal price landscape, flat
// base intensity, one-day horizon.
struct SimulatedConfig {
  int n_problems = 20000;
  int n_periods = 96;
  double base_intensity = 10.0;
  double volume_sigma = 0.0;  // per-period sd of the intensity walk
  double goal = 100.0;
  double penalty = 2.0;
  int shock_t0 = -1;  // -1: no shock
  double shock_factor = 1.0;
  double price_median = 1.0;
  double price_sigma = 0.5;
  BidNoise bid_noise = BidNoise::gamma_k(4.0);
  std::uint64_t seed = 1;
  std::int64_t id_offset = 0;
};

struct SimulatedDataset {
  SimulatedConfig config;
  std::shared_ptr<const LandscapeProcess> raw;
  std::shared_ptr<const LandscapeProcess> smoothed;
  std::vector<BiddingProblem> problems;
  double mean_volume = 0.0;  // average auction volume per period
  double mean_price = 0.0;
};

SimulatedDataset gen_simulated(const SimulatedConfig& cfg);

// Average delivery a controller must sustain per period to hit its goal.
double mean_goal_pace(std::span<const BiddingProblem> problems);

// Lognormal winning-price distribution on the grid, upper tail clamped to
// the top edge.
BidLandscape lognormal_landscape(const PriceGrid& grid, double median,
                                 double sigma);

// ---------------------------------------------------------------------
// Many-placement world with per-placement price levels, daily seasonality,
// day-to-day drift and idiosyncratic day shocks. Days split into a leading
// training block and held-out evaluation days.
struct ProductionConfig {
  int n_placements = 24;
  int n_days = 8;
  int train_days = 6;
  int n_periods = 288;
  int n_train_problems = 20000;
  int n_val_problems = 500;
  std::vector<double> eval_goals = {100.0, 500.0, 1000.0, 1500.0};
  int eval_episodes_per_goal = 500;
  double goal_min = 10.0;
  double goal_max = 1000.0;
  double penalty = 2.0;
  BidNoise bid_noise = BidNoise::gamma_k(4.0);
  std::uint64_t seed = 1;
};

struct ProductionDataset {
  ProductionConfig config;
  // Index p * n_days + d.
  std::vector<std::shared_ptr<const LandscapeProcess>> day_raw;
  std::vector<std::shared_ptr<const LandscapeProcess>> day_smoothed;
  std::vector<std::vector<double>> day_paths;
  std::vector<BiddingProblem> train;
  std::vector<BiddingProblem> validation;
  std::vector<std::pair<double, std::vector<BiddingProblem>>> eval_buckets;
  double mean_volume = 0.0;
  double mean_price = 0.0;
  HarmonicCurve reference;
};

ProductionDataset gen_production(const ProductionConfig& cfg);

// Dataset directory round-trip (manifest + landscape/path/problem CSVs).
// Loading reproduces the in-memory dataset bit for bit.
void save_simulated_dataset(const std::filesystem::path& dir,
                            const SimulatedDataset& ds);
SimulatedDataset load_simulated_dataset(const std::filesystem::path& dir);
void save_production_dataset(const std::filesystem::path& dir,
                             const ProductionDataset& ds);
ProductionDataset load_production_dataset(const std::filesystem::path& dir);
bool dataset_is_production(const std::filesystem::path& dir);

// ---------------------------------------------------------------------
// Volume-robustness sweep: one model per training volatility, each then
// rolled against deterministic mid-day volume drops of varying depth.
struct ShockGridConfig {
  std::vector<double> train_sigmas = {0.0, 0.2, 1.0, 5.0, 10.0};
  std::vector<double> shock_factors = {1.0, 1.5, 2.0, 3.0, 5.0, 10.0};
  int shock_t0 = 65;
  SimulatedConfig base;
  TrainConfig train;
  int n_val_problems = 200;
};

struct ShockGridResult {
  std::vector<GruParams> models;            // one per training sigma
  std::vector<std::vector<EpisodeTrace>> traces;  // [sigma][factor]
  std::vector<Metrics> report;
  std::vector<bool> diverged;
};

ShockGridResult experiment_shock_grid(const ShockGridConfig& cfg,
                                      const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------
// Bid-noise robustness: models trained under low/high bid randomization,
// each evaluated under both regimes. Noise levels are relative standard
// deviations, mapped onto the gamma family (shape = 1 / sigma^2).
struct NoiseCrossConfig {
  double low_noise = 0.1;
  double high_noise = 10.0;
  double volume_sigma = 1.0;
  int n_train_problems = 20000;
  int n_val_problems = 200;
  int n_eval_episodes = 2000;
  SimulatedConfig base;  // landscape/goal/periods shared by all cells
  TrainConfig train;
};

struct NoiseCrossResult {
  GruParams model_low;
  GruParams model_high;
  std::vector<Metrics> report;  // cells model{low,high} x eval{low,high}
  // cost difference mismatched - matched per eval column
  BootstrapCi excess_low_eval;
  BootstrapCi excess_high_eval;
  // shortfall probability difference high eval - low eval per model
  BootstrapCi shortfall_rise_low_model;
  BootstrapCi shortfall_rise_high_model;
};

NoiseCrossResult experiment_noise_cross(const NoiseCrossConfig& cfg,
                                        const std::filesystem::path& out_dir);

// ---------------------------------------------------------------------
// Trained recurrent controller against the tuned PI baseline on held-out
// days, bucketed by goal size.
struct PiVsRnnConfig {
  ProductionConfig data;
  TrainConfig gru_train;
  TrainConfig pi_train;
};

struct BucketComparison {
  double goal = 0.0;
  Metrics pi;
  Metrics rnn;
  BootstrapCi cost_ratio;  // mean rnn cost / mean pi cost
};

struct PiVsRnnResult {
  GruParams model;
  PiParams pi_params;
  std::vector<BucketComparison> buckets;
  std::vector<Metrics> report;
  bool gru_diverged = false;
};

PiVsRnnResult experiment_pi_vs_rnn(const PiVsRnnConfig& cfg,
                                   const std::filesystem::path& out_dir);
PiVsRnnResult experiment_pi_vs_rnn(const PiVsRnnConfig& cfg,
                                   const ProductionDataset& data,
                                   const std::filesystem::path& out_dir);

}  // namespace bidlab
