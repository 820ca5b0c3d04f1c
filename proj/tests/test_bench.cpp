#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <doctest.h>

#include "bidlab/bench.hpp"
#include "bidlab/rng.hpp"
#include "bidlab/training.hpp"
#include "bidlab/util.hpp"

using namespace bidlab;

namespace {

std::filesystem::path temp_dir(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "bidlab_bench_tests" /
             name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

EpisodeTrace make_trace(double goal, double penalty,
                        std::vector<double> volumes,
                        std::vector<double> spends) {
  EpisodeTrace tr;
  tr.goal = goal;
  tr.penalty = penalty;
  tr.bids.assign(volumes.size(), 1.0);
  tr.intensities.assign(volumes.size(), 10.0);
  tr.volumes = std::move(volumes);
  tr.spends = std::move(spends);
  return tr;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

SimulatedConfig tiny_sim_config() {
  SimulatedConfig c;
  c.n_problems = 40;
  c.n_periods = 16;
  c.base_intensity = 10.0;
  c.goal = 50.0;
  c.penalty = 2.0;
  c.seed = 17;
  return c;
}

ProductionConfig tiny_prod_config() {
  ProductionConfig c;
  c.n_placements = 2;
  c.n_days = 3;
  c.train_days = 2;
  c.n_periods = 12;
  c.n_train_problems = 30;
  c.n_val_problems = 10;
  c.eval_goals = {50.0, 100.0};
  c.eval_episodes_per_goal = 8;
  c.goal_min = 20.0;
  c.goal_max = 200.0;
  c.penalty = 2.0;
  c.seed = 23;
  return c;
}

}  // namespace

TEST_CASE("metrics aggregate costs, spend, penalty and shortfalls") {
  // Two episodes: one misses the goal (volume 8 < 10, penalty 2*2=4),
  // one overshoots (volume 12, no penalty).
  std::vector<EpisodeTrace> traces;
  traces.push_back(make_trace(10.0, 2.0, {5.0, 3.0}, {2.0, 1.0}));
  traces.push_back(make_trace(10.0, 2.0, {6.0, 6.0}, {4.0, 3.0}));
  Metrics m = compute_metrics("exp", "cell", traces);
  CHECK(m.experiment == "exp");
  CHECK(m.cell == "cell");
  CHECK(m.n == 2);
  // Costs are 3+4=7 and 7+0=7.
  CHECK(m.mean_cost == doctest::Approx(7.0).epsilon(1e-12));
  CHECK(m.std_cost == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(m.mean_spend == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(m.mean_penalty == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(m.shortfall_prob == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("metrics use the population deviation and strict shortfall") {
  std::vector<EpisodeTrace> traces;
  traces.push_back(make_trace(10.0, 1.0, {10.0}, {2.0}));  // exactly on goal
  traces.push_back(make_trace(10.0, 1.0, {10.0}, {6.0}));
  Metrics m = compute_metrics("e", "c", traces);
  // Hitting the goal exactly is not a shortfall.
  CHECK(m.shortfall_prob == 0.0);
  CHECK(m.mean_penalty == 0.0);
  // Costs 2 and 6: population std is 2, not the sample 2*sqrt(2).
  CHECK(m.std_cost == doctest::Approx(2.0).epsilon(1e-12));

  Metrics one = compute_metrics("e", "c", {traces.data(), 1});
  CHECK(one.n == 1);
  CHECK(one.std_cost == 0.0);

  Metrics empty = compute_metrics("e", "c", {});
  CHECK(empty.n == 0);
  CHECK(empty.mean_cost == 0.0);
}

TEST_CASE("metric decomposition matches the trace identities") {
  Rng rng(5);
  std::vector<EpisodeTrace> traces;
  for (int i = 0; i < 20; ++i) {
    std::vector<double> vols, spends;
    for (int t = 0; t < 6; ++t) {
      vols.push_back(rng.uniform(0.0, 3.0));
      spends.push_back(rng.uniform(0.0, 2.0));
    }
    traces.push_back(make_trace(rng.uniform(5.0, 12.0), 2.0, vols, spends));
  }
  Metrics m = compute_metrics("e", "c", traces);
  CHECK(m.mean_cost ==
        doctest::Approx(m.mean_spend + m.mean_penalty).epsilon(1e-9));
}

TEST_CASE("report csv lists one row per cell") {
  auto dir = temp_dir("report");
  std::vector<Metrics> rows(2);
  rows[0] = {"exp", "a", 1.5, 0.5, 0.25, 1.0, 0.5, 4};
  rows[1] = {"exp", "b", 2.5, 0.0, 0.0, 2.5, 0.0, 2};
  save_report(dir / "report.csv", rows);
  const std::string body = slurp(dir / "report.csv");
  CHECK(body ==
        "experiment,cell,mean_cost,std_cost,shortfall_prob,mean_spend,"
        "mean_penalty,n\n"
        "exp,a,1.5,0.5,0.25,1,0.5,4\n"
        "exp,b,2.5,0,0,2.5,0,2\n");
}

TEST_CASE("bootstrap of a constant collapses to the constant") {
  std::vector<double> v(40, 3.25);
  BootstrapCi ci = bootstrap_mean(v, 200, 9);
  CHECK(ci.point == 3.25);
  CHECK(ci.lo == 3.25);
  CHECK(ci.hi == 3.25);
}

TEST_CASE("bootstrap interval brackets the point and is deterministic") {
  Rng rng(11);
  std::vector<double> v;
  for (int i = 0; i < 300; ++i) v.push_back(rng.normal(5.0, 2.0));
  BootstrapCi a = bootstrap_mean(v, 500, 42);
  BootstrapCi b = bootstrap_mean(v, 500, 42);
  CHECK(a.point == b.point);
  CHECK(a.lo == b.lo);
  CHECK(a.hi == b.hi);
  CHECK(a.lo <= a.point);
  CHECK(a.point <= a.hi);
  // 95% interval of a 300-sample mean: roughly point +- 0.23.
  CHECK(a.hi - a.lo > 0.1);
  CHECK(a.hi - a.lo < 1.0);
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  CHECK(a.point == doctest::Approx(mean).epsilon(1e-12));

  BootstrapCi c = bootstrap_mean(v, 500, 43);
  CHECK((c.lo != a.lo || c.hi != a.hi));
}

TEST_CASE("paired bootstrap of identical columns is exactly zero") {
  Rng rng(13);
  std::vector<double> v;
  for (int i = 0; i < 80; ++i) v.push_back(rng.uniform(1.0, 4.0));
  BootstrapCi diff = bootstrap_paired_diff(v, v, 300, 7);
  CHECK(diff.point == 0.0);
  CHECK(diff.lo == 0.0);
  CHECK(diff.hi == 0.0);
  BootstrapCi ratio = bootstrap_paired_ratio(v, v, 300, 7);
  CHECK(ratio.point == 1.0);
  CHECK(ratio.lo == 1.0);
  CHECK(ratio.hi == 1.0);
}

TEST_CASE("paired bootstrap detects a constant offset") {
  Rng rng(29);
  std::vector<double> a, b;
  for (int i = 0; i < 200; ++i) {
    double x = rng.uniform(2.0, 6.0);
    a.push_back(x + 1.0);
    b.push_back(x);
  }
  BootstrapCi diff = bootstrap_paired_diff(a, b, 500, 3);
  CHECK(diff.point == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(diff.lo == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(diff.hi == doctest::Approx(1.0).epsilon(1e-9));

  std::vector<double> shorter(a.begin(), a.begin() + 10);
  CHECK_THROWS_AS(bootstrap_paired_diff(shorter, b, 100, 1),
                  std::invalid_argument);
  CHECK_THROWS_AS(bootstrap_paired_ratio(shorter, b, 100, 1),
                  std::invalid_argument);
}

TEST_CASE("comparison csv round-trips the interval fields") {
  auto dir = temp_dir("cis");
  std::vector<ComparisonRow> rows = {{"e", "a_vs_b", {0.5, 0.25, 0.75}}};
  save_comparisons(dir / "cis.csv", rows);
  CHECK(slurp(dir / "cis.csv") ==
        "experiment,comparison,point,lo,hi\n"
        "e,a_vs_b,0.5,0.25,0.75\n");
}

TEST_CASE("lognormal landscape matches the closed-form mean price") {
  const PriceGrid grid = default_price_grid();
  BidLandscape l = lognormal_landscape(grid, 1.0, 0.5);
  // E[price] = median * exp(sigma^2 / 2); the grid discretization keeps a
  // few permille of error.
  const double want = std::exp(0.125);
  CHECK(l.mean_price() == doctest::Approx(want).epsilon(0.05));
  CHECK(l.win_rate_at(grid.max_price) == 1.0);
  // One-bin discretization around the median: the step sits a knot below.
  CHECK(l.win_rate_at(1.0) == doctest::Approx(0.5).epsilon(0.08));
  // The win rate is a cdf: monotone within [0, 1].
  double prev = 0.0;
  for (double b = 0.01; b < 100.0; b *= 1.7) {
    double w = l.win_rate_at(b);
    CHECK(w >= prev);
    CHECK(w <= 1.0);
    prev = w;
  }
  CHECK_THROWS_AS(lognormal_landscape(grid, 0.0, 0.5),
                  std::invalid_argument);
  CHECK_THROWS_AS(lognormal_landscape(grid, 1.0, -1.0),
                  std::invalid_argument);
}

TEST_CASE("simulated dataset without volume noise repeats one exact path") {
  SimulatedConfig c = tiny_sim_config();
  c.volume_sigma = 0.0;
  SimulatedDataset ds = gen_simulated(c);
  REQUIRE(static_cast<int>(ds.problems.size()) == c.n_problems);
  for (const auto& p : ds.problems) {
    REQUIRE(static_cast<int>(p.intensity_path.size()) == c.n_periods);
    for (double v : p.intensity_path) CHECK(v == 10.0);
    CHECK(p.goal == c.goal);
    CHECK(p.penalty == c.penalty);
    CHECK(p.landscapes.get() == ds.smoothed.get());
  }
  CHECK(ds.mean_volume == doctest::Approx(10.0));
  CHECK(ds.mean_price ==
        doctest::Approx(std::exp(0.125)).epsilon(0.05));
  // Training needs the response curves ready.
  CHECK(ds.smoothed->curves(0) != nullptr);
  CHECK(ds.raw->curves(0) == nullptr);
}

TEST_CASE("simulated dataset applies shocks and id offsets") {
  SimulatedConfig c = tiny_sim_config();
  c.volume_sigma = 0.0;
  c.shock_t0 = 6;
  c.shock_factor = 2.0;
  c.id_offset = 900;
  SimulatedDataset ds = gen_simulated(c);
  for (std::size_t i = 0; i < ds.problems.size(); ++i)
    CHECK(ds.problems[i].id == 900 + static_cast<std::int64_t>(i));
  const auto& path = ds.problems[0].intensity_path;
  for (int t = 0; t < c.n_periods; ++t)
    CHECK(path[t] == (t < 6 ? 10.0 : 5.0));
}

TEST_CASE("simulated volume walk accumulates the configured variance") {
  SimulatedConfig c = tiny_sim_config();
  c.n_problems = 1500;
  c.n_periods = 17;
  c.volume_sigma = 0.5;
  SimulatedDataset ds = gen_simulated(c);
  const int t = 16;
  double mean = 0.0;
  for (const auto& p : ds.problems) {
    CHECK(*std::min_element(p.intensity_path.begin(),
                            p.intensity_path.end()) >= 0.0);
    mean += p.intensity_path[t];
  }
  mean /= static_cast<double>(ds.problems.size());
  double var = 0.0;
  for (const auto& p : ds.problems) {
    double d = p.intensity_path[t] - mean;
    var += d * d;
  }
  var /= static_cast<double>(ds.problems.size());
  // Independent increments: Var(path[16]) = 16 * sigma^2 = 4.
  CHECK(mean == doctest::Approx(10.0).epsilon(0.05));
  CHECK(var == doctest::Approx(4.0).epsilon(0.2));

  // Distinct problems use distinct draws.
  CHECK(ds.problems[0].intensity_path != ds.problems[1].intensity_path);
  // Regeneration is bit-identical.
  SimulatedDataset again = gen_simulated(c);
  for (std::size_t i = 0; i < ds.problems.size(); ++i)
    CHECK(again.problems[i].intensity_path == ds.problems[i].intensity_path);

  c.n_problems = 0;
  CHECK_THROWS_AS(gen_simulated(c), std::invalid_argument);
}

TEST_CASE("simulated dataset round-trips through its directory") {
  SimulatedConfig c = tiny_sim_config();
  c.volume_sigma = 0.7;
  c.id_offset = 5;
  SimulatedDataset ds = gen_simulated(c);
  auto dir = temp_dir("sim_rt");
  save_simulated_dataset(dir, ds);
  CHECK(!dataset_is_production(dir));

  SimulatedDataset back = load_simulated_dataset(dir);
  CHECK(back.config.n_problems == c.n_problems);
  CHECK(back.config.volume_sigma == c.volume_sigma);
  CHECK(back.config.seed == c.seed);
  CHECK(back.mean_volume == ds.mean_volume);
  CHECK(back.mean_price == ds.mean_price);
  REQUIRE(back.problems.size() == ds.problems.size());
  for (std::size_t i = 0; i < ds.problems.size(); ++i) {
    CHECK(back.problems[i].id == ds.problems[i].id);
    CHECK(back.problems[i].goal == ds.problems[i].goal);
    CHECK(back.problems[i].penalty == ds.problems[i].penalty);
    CHECK(back.problems[i].intensity_path == ds.problems[i].intensity_path);
  }
  for (double b : {0.05, 0.3, 1.0, 4.0}) {
    CHECK(back.raw->at(0).win_rate_at(b) == ds.raw->at(0).win_rate_at(b));
    CHECK(back.smoothed->at(0).win_rate_at(b) ==
          ds.smoothed->at(0).win_rate_at(b));
    CHECK(back.smoothed->at(0).spend_rate_at(b) ==
          ds.smoothed->at(0).spend_rate_at(b));
  }

  // Saving the reload reproduces every byte.
  auto dir2 = temp_dir("sim_rt2");
  save_simulated_dataset(dir2, back);
  for (const char* f :
       {"manifest.json", "paths.csv", "problems.csv", "landscapes/ls0.csv"})
    CHECK(slurp(dir / f) == slurp(dir2 / f));
}

TEST_CASE("tampered dataset files fail the checksum") {
  SimulatedConfig c = tiny_sim_config();
  c.n_problems = 4;
  SimulatedDataset ds = gen_simulated(c);
  auto dir = temp_dir("sim_tamper");
  save_simulated_dataset(dir, ds);
  {
    std::ofstream out(dir / "paths.csv", std::ios::app);
    out << "tail\n";
  }
  CHECK_THROWS_AS(load_simulated_dataset(dir), ConfigError);

  auto dir2 = temp_dir("sim_kind");
  save_simulated_dataset(dir2, ds);
  CHECK_THROWS_AS(load_production_dataset(dir2), ConfigError);
  CHECK_THROWS_AS(load_simulated_dataset(temp_dir("sim_missing")),
                  std::runtime_error);
}

TEST_CASE("production dataset shapes, splits and goal ranges") {
  ProductionConfig c = tiny_prod_config();
  ProductionDataset ds = gen_production(c);
  const int P = c.n_placements, D = c.n_days;
  REQUIRE(static_cast<int>(ds.day_paths.size()) == P * D);
  REQUIRE(static_cast<int>(ds.day_raw.size()) == P * D);
  REQUIRE(static_cast<int>(ds.day_smoothed.size()) == P * D);
  CHECK(static_cast<int>(ds.train.size()) == c.n_train_problems);
  CHECK(static_cast<int>(ds.validation.size()) == c.n_val_problems);
  REQUIRE(ds.eval_buckets.size() == 2);
  CHECK(ds.eval_buckets[0].first == 50.0);
  CHECK(ds.eval_buckets[1].first == 100.0);

  // One landscape process per placement, shared across its days.
  for (int p = 0; p < P; ++p)
    for (int d = 1; d < D; ++d) {
      CHECK(ds.day_smoothed[p * D + d].get() == ds.day_smoothed[p * D].get());
      CHECK(ds.day_raw[p * D + d].get() == ds.day_raw[p * D].get());
    }

  // Maps a problem back to its day row; the split decides the day range.
  auto day_of = [&](const BiddingProblem& prob) {
    for (int k = 0; k < P * D; ++k)
      if (ds.day_smoothed[k].get() == prob.landscapes.get() &&
          ds.day_paths[k] == prob.intensity_path)
        return k % D;
    return -1;
  };
  std::set<std::int64_t> ids;
  for (const auto& p : ds.train) {
    CHECK(p.goal >= c.goal_min);
    CHECK(p.goal <= c.goal_max);
    const int d = day_of(p);
    CHECK(d >= 0);
    CHECK(d < c.train_days);
    CHECK(ids.insert(p.id).second);
  }
  for (const auto& p : ds.validation) {
    const int d = day_of(p);
    CHECK(d >= 0);
    CHECK(d < c.train_days);
    CHECK(ids.insert(p.id).second);
  }
  for (const auto& [goal, bucket] : ds.eval_buckets) {
    CHECK(static_cast<int>(bucket.size()) == c.eval_episodes_per_goal);
    for (const auto& p : bucket) {
      CHECK(p.goal == goal);
      const int d = day_of(p);
      CHECK(d >= c.train_days);
      CHECK(d < D);
      CHECK(ids.insert(p.id).second);
    }
  }

  CHECK(ds.mean_volume > 0.0);
  CHECK(ds.mean_price > 0.0);
  CHECK(std::isfinite(ds.reference.c0));
  CHECK(ds.reference.c1 >= 0.0);
  CHECK(ds.reference.c2 >= 0.0);

  ProductionDataset again = gen_production(c);
  CHECK(again.day_paths == ds.day_paths);
  for (std::size_t i = 0; i < ds.train.size(); ++i)
    CHECK(again.train[i].goal == ds.train[i].goal);

  c.train_days = c.n_days;
  CHECK_THROWS_AS(gen_production(c), std::invalid_argument);
}

TEST_CASE("production dataset round-trips through its directory") {
  ProductionConfig c = tiny_prod_config();
  ProductionDataset ds = gen_production(c);
  auto dir = temp_dir("prod_rt");
  save_production_dataset(dir, ds);
  CHECK(dataset_is_production(dir));

  ProductionDataset back = load_production_dataset(dir);
  CHECK(back.config.n_placements == c.n_placements);
  CHECK(back.config.eval_goals == c.eval_goals);
  CHECK(back.mean_volume == ds.mean_volume);
  CHECK(back.mean_price == ds.mean_price);
  CHECK(back.reference.c0 == ds.reference.c0);
  CHECK(back.reference.c1 == ds.reference.c1);
  CHECK(back.reference.phi1 == ds.reference.phi1);
  CHECK(back.reference.c2 == ds.reference.c2);
  CHECK(back.reference.phi2 == ds.reference.phi2);
  CHECK(back.day_paths == ds.day_paths);
  REQUIRE(back.train.size() == ds.train.size());
  REQUIRE(back.validation.size() == ds.validation.size());
  REQUIRE(back.eval_buckets.size() == ds.eval_buckets.size());
  for (std::size_t i = 0; i < ds.train.size(); ++i) {
    CHECK(back.train[i].id == ds.train[i].id);
    CHECK(back.train[i].goal == ds.train[i].goal);
    CHECK(back.train[i].intensity_path == ds.train[i].intensity_path);
  }
  for (std::size_t b = 0; b < ds.eval_buckets.size(); ++b) {
    const auto& want = ds.eval_buckets[b].second;
    const auto& got = back.eval_buckets[b].second;
    REQUIRE(got.size() == want.size());
    for (std::size_t i = 0; i < want.size(); ++i) {
      CHECK(got[i].id == want[i].id);
      CHECK(got[i].goal == want[i].goal);
      CHECK(got[i].intensity_path == want[i].intensity_path);
    }
  }
  for (double b : {0.1, 0.6, 2.0}) {
    CHECK(back.day_smoothed[0]->at(3).win_rate_at(b) ==
          ds.day_smoothed[0]->at(3).win_rate_at(b));
    CHECK(back.day_smoothed[5]->at(0).spend_rate_at(b) ==
          ds.day_smoothed[5]->at(0).spend_rate_at(b));
  }

  auto dir2 = temp_dir("prod_rt2");
  save_production_dataset(dir2, back);
  for (const char* f : {"manifest.json", "paths.csv", "problems.csv",
                        "landscapes/ls0.csv", "landscapes/ls1.csv"})
    CHECK(slurp(dir / f) == slurp(dir2 / f));
}

TEST_CASE("shock grid experiment writes a full factorial report") {
  ShockGridConfig cfg;
  cfg.train_sigmas = {0.0, 1.0};
  cfg.shock_factors = {1.0, 2.0};
  cfg.shock_t0 = 8;
  cfg.base = tiny_sim_config();
  cfg.base.n_problems = 24;
  cfg.n_val_problems = 8;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.alpha0 = 0.05;
  cfg.train.validation_period = 2;
  auto dir = temp_dir("shock_grid");
  ShockGridResult res = experiment_shock_grid(cfg, dir);

  REQUIRE(res.models.size() == 2);
  REQUIRE(res.traces.size() == 2);
  REQUIRE(res.traces[0].size() == 2);
  REQUIRE(res.report.size() == 4);
  CHECK(res.diverged == std::vector<bool>{false, false});
  for (const auto& m : res.report) {
    CHECK(m.experiment == "shock_grid");
    CHECK(m.n == 1);
    CHECK(m.mean_cost >= 0.0);
  }
  CHECK(res.report[0].cell == "sigma0_factor1");
  CHECK(res.report[3].cell == "sigma1_factor2");
  for (const auto& row : res.traces)
    for (const auto& tr : row)
      for (double b : tr.bids) {
        CHECK(b >= 0.0);
        CHECK(b <= cfg.base.penalty);
      }
  // The shocked cell sees the volume drop after t0.
  const auto& shocked = res.traces[0][1];
  CHECK(shocked.intensities[7] == 10.0);
  CHECK(shocked.intensities[8] == 5.0);

  for (const char* f :
       {"report.csv", "model_sigma0.txt", "model_sigma1.txt",
        "train_sigma0.csv", "trace_sigma0_factor1.csv",
        "trace_sigma1_factor2.csv"})
    CHECK(std::filesystem::exists(dir / f));

  auto dir2 = temp_dir("shock_grid2");
  experiment_shock_grid(cfg, dir2);
  CHECK(slurp(dir / "report.csv") == slurp(dir2 / "report.csv"));
  CHECK(slurp(dir / "model_sigma1.txt") == slurp(dir2 / "model_sigma1.txt"));
}

TEST_CASE("noise cross experiment fills all four cells with intervals") {
  NoiseCrossConfig cfg;
  cfg.base = tiny_sim_config();
  cfg.base.n_problems = 24;
  cfg.n_train_problems = 24;
  cfg.n_val_problems = 8;
  cfg.n_eval_episodes = 16;
  cfg.volume_sigma = 0.5;
  cfg.train.epochs = 1;
  cfg.train.batch_size = 8;
  cfg.train.alpha0 = 0.05;
  cfg.train.validation_period = 2;
  auto dir = temp_dir("noise_cross");
  NoiseCrossResult res = experiment_noise_cross(cfg, dir);

  REQUIRE(res.report.size() == 4);
  CHECK(res.report[0].cell == "model_low_eval_low");
  CHECK(res.report[3].cell == "model_high_eval_high");
  for (const auto& m : res.report) {
    CHECK(m.n == 16);
    CHECK(m.mean_cost > 0.0);
  }
  for (const BootstrapCi* ci :
       {&res.excess_low_eval, &res.excess_high_eval,
        &res.shortfall_rise_low_model, &res.shortfall_rise_high_model}) {
    CHECK(ci->lo <= ci->point);
    CHECK(ci->point <= ci->hi);
  }
  for (const char* f :
       {"report.csv", "cis.csv", "model_low.txt", "model_high.txt"})
    CHECK(std::filesystem::exists(dir / f));

  cfg.low_noise = 0.0;
  CHECK_THROWS_AS(experiment_noise_cross(cfg, temp_dir("noise_bad")),
                  std::invalid_argument);
}

TEST_CASE("pi vs rnn experiment reports every goal bucket") {
  PiVsRnnConfig cfg;
  cfg.data = tiny_prod_config();
  cfg.data.eval_goals = {30.0, 60.0};
  cfg.data.eval_episodes_per_goal = 6;
  cfg.gru_train.epochs = 1;
  cfg.gru_train.batch_size = 8;
  cfg.gru_train.alpha0 = 0.05;
  cfg.gru_train.validation_period = 2;
  cfg.pi_train.epochs = 1;
  cfg.pi_train.batch_size = 8;
  cfg.pi_train.alpha0 = 0.01;
  cfg.pi_train.clip_threshold = 1.0;
  cfg.pi_train.validation_period = 2;
  auto dir = temp_dir("pi_vs_rnn");
  PiVsRnnResult res = experiment_pi_vs_rnn(cfg, dir);

  REQUIRE(res.buckets.size() == 2);
  REQUIRE(res.report.size() == 4);
  CHECK(res.buckets[0].goal == 30.0);
  CHECK(res.buckets[1].goal == 60.0);
  for (const auto& b : res.buckets) {
    CHECK(b.pi.n == 6);
    CHECK(b.rnn.n == 6);
    CHECK(b.pi.mean_cost > 0.0);
    CHECK(b.rnn.mean_cost > 0.0);
    CHECK(b.cost_ratio.lo <= b.cost_ratio.point);
    CHECK(b.cost_ratio.point <= b.cost_ratio.hi);
    CHECK(b.cost_ratio.point > 0.0);
  }
  CHECK(res.report[0].cell == "pi_goal30");
  CHECK(res.report[1].cell == "rnn_goal30");
  for (const char* f : {"report.csv", "cis.csv", "model_rnn.txt",
                        "model_pi.txt", "train_rnn.csv", "train_pi.csv"})
    CHECK(std::filesystem::exists(dir / f));

  // A rebuilt dataset plus rerun reproduces the reports byte for byte.
  auto dir2 = temp_dir("pi_vs_rnn2");
  experiment_pi_vs_rnn(cfg, dir2);
  CHECK(slurp(dir / "report.csv") == slurp(dir2 / "report.csv"));
  CHECK(slurp(dir / "cis.csv") == slurp(dir2 / "cis.csv"));
}
