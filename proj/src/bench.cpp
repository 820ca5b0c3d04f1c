#include "bidlab/bench.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab {

namespace {

// Compact number for cell names and file names. Report values themselves
// are written round-trip exact; labels are only identifiers.
std::string label(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", x);
  return buf;
}

std::string noise_name(NoiseFamily f) {
  switch (f) {
    case NoiseFamily::dirac: return "dirac";
    case NoiseFamily::gamma: return "gamma";
    case NoiseFamily::lognormal: return "lognormal";
  }
  throw std::logic_error("bad noise family");
}

NoiseFamily noise_from_name(const std::string& s) {
  if (s == "dirac") return NoiseFamily::dirac;
  if (s == "gamma") return NoiseFamily::gamma;
  if (s == "lognormal") return NoiseFamily::lognormal;
  throw ConfigError("unknown noise family: " + s);
}

nlohmann::json noise_to_json(const BidNoise& n) {
  return {{"family", noise_name(n.family)}, {"shape", n.shape}};
}

BidNoise noise_from_json(const nlohmann::json& j) {
  return {noise_from_name(j.at("family").get<std::string>()),
          j.at("shape").get<double>()};
}

BootstrapCi percentile_ci(double point, std::vector<double> stats) {
  std::sort(stats.begin(), stats.end());
  const int b = static_cast<int>(stats.size());
  int lo_i = static_cast<int>(std::floor(0.025 * b));
  int hi_i = static_cast<int>(std::ceil(0.975 * b)) - 1;
  lo_i = std::clamp(lo_i, 0, b - 1);
  hi_i = std::clamp(hi_i, 0, b - 1);
  return {point, stats[lo_i], stats[hi_i]};
}

template <typename Stat>
BootstrapCi bootstrap_stat(std::size_t n, int n_resamples, std::uint64_t seed,
                           Stat&& stat) {
  if (n == 0) throw std::invalid_argument("bootstrap over empty sample");
  if (n_resamples < 1) throw std::invalid_argument("bootstrap needs B >= 1");
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const double point = stat(idx);
  Rng rng(seed);
  std::vector<double> stats(n_resamples);
  for (int b = 0; b < n_resamples; ++b) {
    for (std::size_t i = 0; i < n; ++i)
      idx[i] = static_cast<std::size_t>(rng.raw() % n);
    stats[b] = stat(idx);
  }
  return percentile_ci(point, std::move(stats));
}

void require_same_size(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw std::invalid_argument("paired bootstrap needs equal sizes");
}

// Deterministic expected-feedback rollout of a stored problem.
EpisodeTrace eval_problem(Controller& c, const BiddingProblem& prob) {
  return run_episode_on_path(c, prob.intensity_path, *prob.landscapes,
                             prob.goal, prob.penalty, FeedbackMode::expected);
}

}  // namespace

Metrics compute_metrics(std::string experiment, std::string cell,
                        std::span<const EpisodeTrace> traces) {
  Metrics m;
  m.experiment = std::move(experiment);
  m.cell = std::move(cell);
  m.n = static_cast<int>(traces.size());
  if (traces.empty()) return m;
  double sum_cost = 0.0, sum_spend = 0.0, sum_pen = 0.0;
  int short_n = 0;
  for (const auto& tr : traces) {
    sum_cost += tr.final_cost();
    sum_spend += tr.total_spend();
    sum_pen += tr.penalty_paid();
    if (tr.total_volume() < tr.goal) ++short_n;
  }
  const double n = static_cast<double>(m.n);
  m.mean_cost = sum_cost / n;
  m.mean_spend = sum_spend / n;
  m.mean_penalty = sum_pen / n;
  m.shortfall_prob = static_cast<double>(short_n) / n;
  double ss = 0.0;
  for (const auto& tr : traces) {
    const double d = tr.final_cost() - m.mean_cost;
    ss += d * d;
  }
  m.std_cost = std::sqrt(ss / n);
  return m;
}

void save_report(const std::filesystem::path& p,
                 std::span<const Metrics> rows) {
  std::string out =
      "experiment,cell,mean_cost,std_cost,shortfall_prob,mean_spend,"
      "mean_penalty,n\n";
  for (const auto& r : rows) {
    out += join_csv({r.experiment, r.cell, fmt_double(r.mean_cost),
                     fmt_double(r.std_cost), fmt_double(r.shortfall_prob),
                     fmt_double(r.mean_spend), fmt_double(r.mean_penalty),
                     std::to_string(r.n)});
    out += '\n';
  }
  write_text_file(p, out);
}

BootstrapCi bootstrap_mean(std::span<const double> v, int b,
                           std::uint64_t seed) {
  return bootstrap_stat(v.size(), b, seed,
                        [&](const std::vector<std::size_t>& idx) {
                          double s = 0.0;
                          for (std::size_t i : idx) s += v[i];
                          return s / static_cast<double>(idx.size());
                        });
}

BootstrapCi bootstrap_paired_diff(std::span<const double> a,
                                  std::span<const double> b, int n_resamples,
                                  std::uint64_t seed) {
  require_same_size(a, b);
  return bootstrap_stat(a.size(), n_resamples, seed,
                        [&](const std::vector<std::size_t>& idx) {
                          double s = 0.0;
                          for (std::size_t i : idx) s += a[i] - b[i];
                          return s / static_cast<double>(idx.size());
                        });
}

BootstrapCi bootstrap_paired_ratio(std::span<const double> a,
                                   std::span<const double> b,
                                   int n_resamples, std::uint64_t seed) {
  require_same_size(a, b);
  return bootstrap_stat(a.size(), n_resamples, seed,
                        [&](const std::vector<std::size_t>& idx) {
                          double sa = 0.0, sb = 0.0;
                          for (std::size_t i : idx) {
                            sa += a[i];
                            sb += b[i];
                          }
                          return sa / sb;
                        });
}

void save_comparisons(const std::filesystem::path& p,
                      std::span<const ComparisonRow> rows) {
  std::string out = "experiment,comparison,point,lo,hi\n";
  for (const auto& r : rows) {
    out += join_csv({r.experiment, r.comparison, fmt_double(r.ci.point),
                     fmt_double(r.ci.lo), fmt_double(r.ci.hi)});
    out += '\n';
  }
  write_text_file(p, out);
}

BidLandscape lognormal_landscape(const PriceGrid& grid, double median,
                                 double sigma) {
  if (!(median > 0.0) || !(sigma > 0.0))
    throw std::invalid_argument("lognormal landscape needs positive params");
  std::vector<double> cdf(grid.edges.size());
  const double inv = 1.0 / (sigma * std::sqrt(2.0));
  for (std::size_t k = 0; k < cdf.size(); ++k) {
    const double z = std::log(grid.edges[k] / median) * inv;
    cdf[k] = 0.5 * std::erfc(-z);
  }
  // Upper tail mass sits at the top edge.
  cdf.back() = 1.0;
  return BidLandscape::from_cdf(grid, std::move(cdf));
}

SimulatedDataset gen_simulated(const SimulatedConfig& cfg) {
  if (cfg.n_problems < 1 || cfg.n_periods < 1)
    throw std::invalid_argument("simulated dataset needs problems/periods");
  const PriceGrid grid = default_price_grid();
  BidLandscape base =
      lognormal_landscape(grid, cfg.price_median, cfg.price_sigma);

  SimulatedDataset ds;
  ds.config = cfg;
  ds.mean_price = base.mean_price();
  ds.raw = std::make_shared<const LandscapeProcess>(std::move(base));
  ds.smoothed = std::make_shared<const LandscapeProcess>(
      smooth_process(*ds.raw, cfg.bid_noise));

  VolumeScenario scen =
      VolumeScenario::constant(cfg.n_periods, cfg.base_intensity);
  scen.with_noise(cfg.volume_sigma);
  if (cfg.shock_t0 >= 0) scen.with_shock(cfg.shock_t0, cfg.shock_factor);

  ds.problems.reserve(cfg.n_problems);
  for (int i = 0; i < cfg.n_problems; ++i) {
    Rng rng(Rng::derive(cfg.seed, 2000 + static_cast<std::uint64_t>(i)));
    BiddingProblem prob;
    prob.id = cfg.id_offset + i;
    prob.landscapes = ds.smoothed;
    prob.intensity_path = scen.sample_path(rng);
    prob.goal = cfg.goal;
    prob.penalty = cfg.penalty;
    ds.problems.push_back(std::move(prob));
  }
  // Observation scale: the average auction volume seen in one period.
  double vol_sum = 0.0;
  for (const auto& p : ds.problems)
    for (double v : p.intensity_path) vol_sum += v;
  ds.mean_volume =
      vol_sum / (static_cast<double>(ds.problems.size()) * cfg.n_periods);
  return ds;
}

double mean_goal_pace(std::span<const BiddingProblem> problems) {
  if (problems.empty()) throw std::invalid_argument("pace of empty dataset");
  double acc = 0.0;
  for (const auto& p : problems)
    acc += p.goal / static_cast<double>(p.intensity_path.size());
  return acc / static_cast<double>(problems.size());
}

ProductionDataset gen_production(const ProductionConfig& cfg) {
  if (cfg.n_placements < 1 || cfg.n_days < 2 || cfg.train_days < 1 ||
      cfg.train_days >= cfg.n_days || cfg.n_periods < 4)
    throw std::invalid_argument("bad production dataset shape");
  const PriceGrid grid = default_price_grid();
  const int P = cfg.n_placements;
  const int D = cfg.n_days;
  const int T = cfg.n_periods;
  constexpr double two_pi = 2.0 * std::numbers::pi;

  ProductionDataset ds;
  ds.config = cfg;
  ds.day_raw.resize(static_cast<std::size_t>(P) * D);
  ds.day_smoothed.resize(static_cast<std::size_t>(P) * D);
  ds.day_paths.resize(static_cast<std::size_t>(P) * D);
  std::vector<double> placement_price(P);

  for (int p = 0; p < P; ++p) {
    Rng rng(Rng::derive(cfg.seed, 3000 + static_cast<std::uint64_t>(p)));
    const double median = std::exp(rng.normal(-0.7, 0.7));
    const double sigma_p = rng.uniform(0.3, 0.7);
    double level = std::exp(rng.normal(std::log(15.0), 1.0));
    HarmonicCurve vol_curve;
    vol_curve.c1 = rng.uniform(0.0, 0.5);
    vol_curve.phi1 = rng.uniform(0.0, two_pi);
    vol_curve.c2 = rng.uniform(0.0, 0.25);
    vol_curve.phi2 = rng.uniform(0.0, two_pi);
    const double price_phase = rng.uniform(0.0, two_pi);

    // Intraday price seasonality; the same landscape process serves every
    // day of the placement, day-to-day change flows through volume.
    std::vector<BidLandscape> periods;
    periods.reserve(T);
    double price_sum = 0.0;
    for (int t = 0; t < T; ++t) {
      const double m =
          median * (1.0 + 0.3 * std::cos(two_pi * t / T + price_phase));
      periods.emplace_back(lognormal_landscape(grid, m, sigma_p));
      price_sum += periods.back().mean_price();
    }
    placement_price[p] = price_sum / T;
    auto raw = std::make_shared<const LandscapeProcess>(std::move(periods));
    auto smoothed = std::make_shared<const LandscapeProcess>(
        smooth_process(*raw, cfg.bid_noise));

    for (int d = 0; d < D; ++d) {
      if (d > 0) level *= std::exp(rng.normal(0.0, 0.15));
      double day_level = level;
      // Occasional one-day inventory dip.
      const double u = rng.uniform();
      const double dip = rng.uniform(1.2, 3.0);
      if (u < 0.3) day_level /= dip;
      std::vector<double> path(T);
      for (int t = 0; t < T; ++t)
        path[t] = day_level * vol_curve.weight(t, T) *
                  std::exp(rng.normal(0.0, 0.1));
      const std::size_t k = static_cast<std::size_t>(p) * D + d;
      ds.day_raw[k] = raw;
      ds.day_smoothed[k] = smoothed;
      ds.day_paths[k] = std::move(path);
    }
  }

  auto draw_problem = [&](std::uint64_t stream, std::int64_t id, int day_lo,
                          int day_n, bool random_goal,
                          double fixed_goal) -> BiddingProblem {
    Rng rng(Rng::derive(cfg.seed, stream));
    const int p = static_cast<int>(rng.raw() % static_cast<std::uint64_t>(P));
    const int d =
        day_lo + static_cast<int>(rng.raw() % static_cast<std::uint64_t>(day_n));
    BiddingProblem prob;
    prob.id = id;
    const std::size_t k = static_cast<std::size_t>(p) * D + d;
    prob.landscapes = ds.day_smoothed[k];
    prob.intensity_path = ds.day_paths[k];
    prob.goal =
        random_goal ? rng.uniform(cfg.goal_min, cfg.goal_max) : fixed_goal;
    prob.penalty = cfg.penalty;
    return prob;
  };

  ds.train.reserve(cfg.n_train_problems);
  for (int i = 0; i < cfg.n_train_problems; ++i)
    ds.train.push_back(draw_problem(4000 + static_cast<std::uint64_t>(i), i,
                                    0, cfg.train_days, true, 0.0));
  ds.validation.reserve(cfg.n_val_problems);
  for (int i = 0; i < cfg.n_val_problems; ++i)
    ds.validation.push_back(draw_problem(
        700000 + static_cast<std::uint64_t>(i), 1000000 + i, 0,
        cfg.train_days, true, 0.0));
  for (std::size_t b = 0; b < cfg.eval_goals.size(); ++b) {
    std::vector<BiddingProblem> bucket;
    bucket.reserve(cfg.eval_episodes_per_goal);
    for (int j = 0; j < cfg.eval_episodes_per_goal; ++j) {
      const std::uint64_t stream = 800000 + 100000 * b + j;
      const std::int64_t id =
          2000000 + 100000 * static_cast<std::int64_t>(b) + j;
      bucket.push_back(draw_problem(stream, id, cfg.train_days,
                                    D - cfg.train_days, false,
                                    cfg.eval_goals[b]));
    }
    ds.eval_buckets.emplace_back(cfg.eval_goals[b], std::move(bucket));
  }

  // Split ids must never collide.
  {
    std::set<std::int64_t> ids;
    auto add = [&](const BiddingProblem& p) {
      if (!ids.insert(p.id).second)
        throw std::logic_error("duplicate problem id");
    };
    for (const auto& p : ds.train) add(p);
    for (const auto& p : ds.validation) add(p);
    for (const auto& [g, bucket] : ds.eval_buckets)
      for (const auto& p : bucket) add(p);
  }

  // Normalizers and the pacing reference come from the training split only.
  double vol_sum = 0.0, price_sum = 0.0;
  for (const auto& p : ds.train)
    for (double v : p.intensity_path) vol_sum += v;
  ds.mean_volume = vol_sum / (static_cast<double>(ds.train.size()) * T);
  for (int p = 0; p < P; ++p) price_sum += placement_price[p];
  ds.mean_price = price_sum / P;
  std::vector<std::vector<double>> train_curves;
  for (int p = 0; p < P; ++p)
    for (int d = 0; d < cfg.train_days; ++d)
      train_curves.push_back(ds.day_paths[static_cast<std::size_t>(p) * D + d]);
  ds.reference = fit_reference_curve(train_curves);
  return ds;
}

// ---------------------------------------------------------------------
// Dataset directory layout:
//   manifest.json              config, normalizers, file checksums
//   landscapes/ls<k>.csv       raw (unsmoothed) per-period cdf processes
//   paths.csv                  path_id,h_0,...   one intensity path per row
//   problems.csv               id,split,landscape,path,goal,penalty
// Smoothed responses are recomputed on load; generation and reload agree
// bit for bit.

namespace {

void write_paths_csv(const std::filesystem::path& p,
                     const std::vector<std::vector<double>>& paths) {
  std::string out = "path_id,values\n";
  for (std::size_t i = 0; i < paths.size(); ++i) {
    std::vector<std::string> f;
    f.reserve(paths[i].size() + 1);
    f.push_back(std::to_string(i));
    for (double v : paths[i]) f.push_back(fmt_double(v));
    out += join_csv(f);
    out += '\n';
  }
  write_text_file(p, out);
}

std::vector<std::vector<double>> read_paths_csv(
    const std::filesystem::path& p) {
  const std::string body = read_text_file(p);
  std::vector<std::vector<double>> paths;
  std::size_t pos = 0;
  bool header = true;
  while (pos < body.size()) {
    std::size_t e = body.find('\n', pos);
    if (e == std::string::npos) e = body.size();
    const std::string line = body.substr(pos, e - pos);
    pos = e + 1;
    if (line.empty()) continue;
    if (header) {
      header = false;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() < 2) throw ConfigError("paths.csv: short row");
    if (parse_long(f[0]) != static_cast<long>(paths.size()))
      throw ConfigError("paths.csv: ids must be dense and ordered");
    std::vector<double> path;
    path.reserve(f.size() - 1);
    for (std::size_t i = 1; i < f.size(); ++i)
      path.push_back(parse_double(f[i]));
    paths.push_back(std::move(path));
  }
  return paths;
}

struct ProblemRow {
  std::int64_t id = 0;
  std::string split;
  int landscape = 0;
  int path = 0;
  double goal = 0.0;
  double penalty = 0.0;
};

void write_problems_csv(const std::filesystem::path& p,
                        const std::vector<ProblemRow>& rows) {
  std::string out = "id,split,landscape,path,goal,penalty\n";
  for (const auto& r : rows) {
    out += join_csv({std::to_string(r.id), r.split,
                     std::to_string(r.landscape), std::to_string(r.path),
                     fmt_double(r.goal), fmt_double(r.penalty)});
    out += '\n';
  }
  write_text_file(p, out);
}

std::vector<ProblemRow> read_problems_csv(const std::filesystem::path& p) {
  const std::string body = read_text_file(p);
  std::vector<ProblemRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < body.size()) {
    std::size_t e = body.find('\n', pos);
    if (e == std::string::npos) e = body.size();
    const std::string line = body.substr(pos, e - pos);
    pos = e + 1;
    if (line.empty()) continue;
    if (header) {
      if (line != "id,split,landscape,path,goal,penalty")
        throw ConfigError("problems.csv: bad header");
      header = false;
      continue;
    }
    const auto f = split_csv(line);
    if (f.size() != 6) throw ConfigError("problems.csv: bad row width");
    ProblemRow r;
    r.id = parse_long(f[0]);
    r.split = f[1];
    r.landscape = static_cast<int>(parse_long(f[2]));
    r.path = static_cast<int>(parse_long(f[3]));
    r.goal = parse_double(f[4]);
    r.penalty = parse_double(f[5]);
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_manifest(const std::filesystem::path& dir, nlohmann::json j,
                    const std::vector<std::string>& files) {
  nlohmann::json sums = nlohmann::json::object();
  for (const auto& f : files) sums[f] = hex64(fnv1a_file(dir / f));
  j["checksums"] = std::move(sums);
  write_text_file(dir / "manifest.json", j.dump(2) + "\n");
}

nlohmann::json read_manifest(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest.json: ") + e.what());
  }
  for (const auto& [file, sum] : j.at("checksums").items()) {
    const std::string got = hex64(fnv1a_file(dir / file));
    if (got != sum.get<std::string>())
      throw ConfigError("dataset checksum mismatch: " + file);
  }
  return j;
}

}  // namespace

void save_simulated_dataset(const std::filesystem::path& dir,
                            const SimulatedDataset& ds) {
  std::filesystem::create_directories(dir / "landscapes");
  ds.raw->save_csv(dir / "landscapes" / "ls0.csv");
  std::vector<std::vector<double>> paths;
  paths.reserve(ds.problems.size());
  std::vector<ProblemRow> rows;
  rows.reserve(ds.problems.size());
  for (const auto& p : ds.problems) {
    ProblemRow r;
    r.id = p.id;
    r.split = "train";
    r.landscape = 0;
    r.path = static_cast<int>(paths.size());
    r.goal = p.goal;
    r.penalty = p.penalty;
    rows.push_back(r);
    paths.push_back(p.intensity_path);
  }
  write_paths_csv(dir / "paths.csv", paths);
  write_problems_csv(dir / "problems.csv", rows);

  const auto& c = ds.config;
  nlohmann::json j{
      {"kind", "simulated"},
      {"config",
       {{"n_problems", c.n_problems},
        {"n_periods", c.n_periods},
        {"base_intensity", c.base_intensity},
        {"volume_sigma", c.volume_sigma},
        {"goal", c.goal},
        {"penalty", c.penalty},
        {"shock_t0", c.shock_t0},
        {"shock_factor", c.shock_factor},
        {"price_median", c.price_median},
        {"price_sigma", c.price_sigma},
        {"bid_noise", noise_to_json(c.bid_noise)},
        {"seed", c.seed},
        {"id_offset", c.id_offset}}},
      {"mean_volume", ds.mean_volume},
      {"mean_price", ds.mean_price}};
  write_manifest(dir, std::move(j),
                 {"landscapes/ls0.csv", "paths.csv", "problems.csv"});
}

SimulatedDataset load_simulated_dataset(const std::filesystem::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  if (j.at("kind").get<std::string>() != "simulated")
    throw ConfigError("not a simulated dataset: " + dir.string());
  const auto& c = j.at("config");
  SimulatedDataset ds;
  ds.config.n_problems = c.at("n_problems").get<int>();
  ds.config.n_periods = c.at("n_periods").get<int>();
  ds.config.base_intensity = c.at("base_intensity").get<double>();
  ds.config.volume_sigma = c.at("volume_sigma").get<double>();
  ds.config.goal = c.at("goal").get<double>();
  ds.config.penalty = c.at("penalty").get<double>();
  ds.config.shock_t0 = c.at("shock_t0").get<int>();
  ds.config.shock_factor = c.at("shock_factor").get<double>();
  ds.config.price_median = c.at("price_median").get<double>();
  ds.config.price_sigma = c.at("price_sigma").get<double>();
  ds.config.bid_noise = noise_from_json(c.at("bid_noise"));
  ds.config.seed = c.at("seed").get<std::uint64_t>();
  ds.config.id_offset = c.at("id_offset").get<std::int64_t>();
  ds.mean_volume = j.at("mean_volume").get<double>();
  ds.mean_price = j.at("mean_price").get<double>();

  ds.raw = std::make_shared<const LandscapeProcess>(
      LandscapeProcess::load_csv(dir / "landscapes" / "ls0.csv"));
  ds.smoothed = std::make_shared<const LandscapeProcess>(
      smooth_process(*ds.raw, ds.config.bid_noise));
  const auto paths = read_paths_csv(dir / "paths.csv");
  const auto rows = read_problems_csv(dir / "problems.csv");
  ds.problems.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.split != "train" || r.landscape != 0)
      throw ConfigError("problems.csv: bad simulated row");
    if (r.path < 0 || r.path >= static_cast<int>(paths.size()))
      throw ConfigError("problems.csv: path out of range");
    BiddingProblem p;
    p.id = r.id;
    p.landscapes = ds.smoothed;
    p.intensity_path = paths[r.path];
    p.goal = r.goal;
    p.penalty = r.penalty;
    ds.problems.push_back(std::move(p));
  }
  return ds;
}

void save_production_dataset(const std::filesystem::path& dir,
                             const ProductionDataset& ds) {
  std::filesystem::create_directories(dir / "landscapes");
  const auto& c = ds.config;
  const int D = c.n_days;
  std::vector<std::string> files;
  for (int p = 0; p < c.n_placements; ++p) {
    const std::string name = "landscapes/ls" + std::to_string(p) + ".csv";
    ds.day_raw[static_cast<std::size_t>(p) * D]->save_csv(dir / name);
    files.push_back(name);
  }
  write_paths_csv(dir / "paths.csv", ds.day_paths);

  std::vector<ProblemRow> rows;
  auto emit = [&](const BiddingProblem& p, const std::string& split) {
    ProblemRow r;
    r.id = p.id;
    r.split = split;
    // Recover the placement/day indices from the shared pointers.
    r.landscape = -1;
    r.path = -1;
    for (std::size_t k = 0; k < ds.day_smoothed.size(); ++k) {
      if (ds.day_smoothed[k].get() == p.landscapes.get() &&
          ds.day_paths[k] == p.intensity_path) {
        r.landscape = static_cast<int>(k) / D;
        r.path = static_cast<int>(k);
        break;
      }
    }
    if (r.path < 0) throw std::logic_error("problem not backed by a day");
    r.goal = p.goal;
    r.penalty = p.penalty;
    rows.push_back(std::move(r));
  };
  for (const auto& p : ds.train) emit(p, "train");
  for (const auto& p : ds.validation) emit(p, "val");
  for (std::size_t b = 0; b < ds.eval_buckets.size(); ++b)
    for (const auto& p : ds.eval_buckets[b].second)
      emit(p, "eval" + std::to_string(b));
  write_problems_csv(dir / "problems.csv", rows);
  files.push_back("paths.csv");
  files.push_back("problems.csv");

  nlohmann::json j{
      {"kind", "production"},
      {"config",
       {{"n_placements", c.n_placements},
        {"n_days", c.n_days},
        {"train_days", c.train_days},
        {"n_periods", c.n_periods},
        {"n_train_problems", c.n_train_problems},
        {"n_val_problems", c.n_val_problems},
        {"eval_goals", c.eval_goals},
        {"eval_episodes_per_goal", c.eval_episodes_per_goal},
        {"goal_min", c.goal_min},
        {"goal_max", c.goal_max},
        {"penalty", c.penalty},
        {"bid_noise", noise_to_json(c.bid_noise)},
        {"seed", c.seed}}},
      {"mean_volume", ds.mean_volume},
      {"mean_price", ds.mean_price},
      {"reference",
       {ds.reference.c0, ds.reference.c1, ds.reference.phi1, ds.reference.c2,
        ds.reference.phi2}}};
  write_manifest(dir, std::move(j), files);
}

ProductionDataset load_production_dataset(const std::filesystem::path& dir) {
  const nlohmann::json j = read_manifest(dir);
  if (j.at("kind").get<std::string>() != "production")
    throw ConfigError("not a production dataset: " + dir.string());
  const auto& c = j.at("config");
  ProductionDataset ds;
  ds.config.n_placements = c.at("n_placements").get<int>();
  ds.config.n_days = c.at("n_days").get<int>();
  ds.config.train_days = c.at("train_days").get<int>();
  ds.config.n_periods = c.at("n_periods").get<int>();
  ds.config.n_train_problems = c.at("n_train_problems").get<int>();
  ds.config.n_val_problems = c.at("n_val_problems").get<int>();
  ds.config.eval_goals = c.at("eval_goals").get<std::vector<double>>();
  ds.config.eval_episodes_per_goal =
      c.at("eval_episodes_per_goal").get<int>();
  ds.config.goal_min = c.at("goal_min").get<double>();
  ds.config.goal_max = c.at("goal_max").get<double>();
  ds.config.penalty = c.at("penalty").get<double>();
  ds.config.bid_noise = noise_from_json(c.at("bid_noise"));
  ds.config.seed = c.at("seed").get<std::uint64_t>();
  ds.mean_volume = j.at("mean_volume").get<double>();
  ds.mean_price = j.at("mean_price").get<double>();
  const auto ref = j.at("reference").get<std::vector<double>>();
  if (ref.size() != 5) throw ConfigError("manifest: bad reference curve");
  ds.reference = {ref[0], ref[1], ref[2], ref[3], ref[4]};

  const int P = ds.config.n_placements;
  const int D = ds.config.n_days;
  ds.day_raw.resize(static_cast<std::size_t>(P) * D);
  ds.day_smoothed.resize(static_cast<std::size_t>(P) * D);
  for (int p = 0; p < P; ++p) {
    auto raw = std::make_shared<const LandscapeProcess>(
        LandscapeProcess::load_csv(dir / "landscapes" /
                                   ("ls" + std::to_string(p) + ".csv")));
    auto smoothed = std::make_shared<const LandscapeProcess>(
        smooth_process(*raw, ds.config.bid_noise));
    for (int d = 0; d < D; ++d) {
      ds.day_raw[static_cast<std::size_t>(p) * D + d] = raw;
      ds.day_smoothed[static_cast<std::size_t>(p) * D + d] = smoothed;
    }
  }
  ds.day_paths = read_paths_csv(dir / "paths.csv");
  if (ds.day_paths.size() != static_cast<std::size_t>(P) * D)
    throw ConfigError("paths.csv: wrong path count");

  ds.eval_buckets.clear();
  for (double g : ds.config.eval_goals)
    ds.eval_buckets.emplace_back(g, std::vector<BiddingProblem>{});
  for (const auto& r : read_problems_csv(dir / "problems.csv")) {
    if (r.path < 0 || r.path >= static_cast<int>(ds.day_paths.size()))
      throw ConfigError("problems.csv: path out of range");
    if (r.landscape != r.path / D)
      throw ConfigError("problems.csv: landscape/path mismatch");
    BiddingProblem p;
    p.id = r.id;
    p.landscapes = ds.day_smoothed[r.path];
    p.intensity_path = ds.day_paths[r.path];
    p.goal = r.goal;
    p.penalty = r.penalty;
    if (r.split == "train") {
      ds.train.push_back(std::move(p));
    } else if (r.split == "val") {
      ds.validation.push_back(std::move(p));
    } else if (r.split.rfind("eval", 0) == 0) {
      const long b = parse_long(r.split.substr(4));
      if (b < 0 || b >= static_cast<long>(ds.eval_buckets.size()))
        throw ConfigError("problems.csv: bad eval bucket");
      ds.eval_buckets[b].second.push_back(std::move(p));
    } else {
      throw ConfigError("problems.csv: unknown split " + r.split);
    }
  }
  return ds;
}

bool dataset_is_production(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_text_file(dir / "manifest.json"));
    return j.at("kind").get<std::string>() == "production";
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("manifest.json: ") + e.what());
  }
}

// ---------------------------------------------------------------------

ShockGridResult experiment_shock_grid(const ShockGridConfig& cfg,
                                      const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  ShockGridResult res;
  const SimulatedConfig& base = cfg.base;

  for (std::size_t si = 0; si < cfg.train_sigmas.size(); ++si) {
    const double sigma = cfg.train_sigmas[si];
    const std::string sig = label(sigma);

    SimulatedConfig tc = base;
    tc.volume_sigma = sigma;
    tc.seed = Rng::derive(base.seed, 10 + si);
    tc.id_offset = static_cast<std::int64_t>(si) * 1000000;
    SimulatedDataset train_ds = gen_simulated(tc);

    SimulatedConfig vc = tc;
    vc.n_problems = cfg.n_val_problems;
    vc.seed = Rng::derive(base.seed, 40 + si);
    vc.id_offset = tc.id_offset + 500000;
    SimulatedDataset val_ds = gen_simulated(vc);

    GruParams init =
        GruParams::init(16, 4, base.penalty, Rng::derive(cfg.train.seed, 70));
    init.norm = {train_ds.mean_volume, train_ds.mean_price};
    TrainConfig t = cfg.train;
    t.seed = Rng::derive(cfg.train.seed, 200 + si);
    TrainResult tr = train_gru(init, train_ds.problems, val_ds.problems, t);
    save_gru_model(out_dir / ("model_sigma" + sig + ".txt"), tr.params);
    save_training_log(out_dir / ("train_sigma" + sig + ".csv"), tr.log);
    res.models.push_back(tr.params);
    res.diverged.push_back(tr.diverged);

    std::vector<EpisodeTrace> row;
    for (double f : cfg.shock_factors) {
      VolumeScenario scen =
          VolumeScenario::constant(base.n_periods, base.base_intensity);
      if (f != 1.0) scen.with_shock(cfg.shock_t0, f);
      GruController c(tr.params);
      EpisodeTrace trace =
          run_episode(c, scen, *train_ds.smoothed, base.goal, base.penalty,
                      FeedbackMode::expected, 0);
      trace.save_csv(out_dir /
                     ("trace_sigma" + sig + "_factor" + label(f) + ".csv"));
      res.report.push_back(compute_metrics(
          "shock_grid", "sigma" + sig + "_factor" + label(f), {&trace, 1}));
      row.push_back(std::move(trace));
    }
    res.traces.push_back(std::move(row));
  }
  save_report(out_dir / "report.csv", res.report);
  return res;
}

NoiseCrossResult experiment_noise_cross(const NoiseCrossConfig& cfg,
                                        const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  if (!(cfg.low_noise > 0.0) || !(cfg.high_noise > 0.0))
    throw std::invalid_argument("noise levels must be positive");
  // Relative bid randomization sigma -> gamma shape.
  const BidNoise noises[2] = {
      BidNoise::gamma_k(1.0 / (cfg.low_noise * cfg.low_noise)),
      BidNoise::gamma_k(1.0 / (cfg.high_noise * cfg.high_noise))};
  const std::string names[2] = {"low", "high"};

  auto make = [&](int ni, int n_problems, std::uint64_t stream,
                  std::int64_t id_offset) {
    SimulatedConfig c = cfg.base;
    c.volume_sigma = cfg.volume_sigma;
    c.n_problems = n_problems;
    c.bid_noise = noises[ni];
    c.seed = Rng::derive(cfg.base.seed, stream);
    c.id_offset = id_offset;
    return gen_simulated(c);
  };

  NoiseCrossResult res;
  GruParams models[2];
  bool have[2] = {false, false};
  for (int ni = 0; ni < 2; ++ni) {
    // Same path/goal stream for both noise levels; only smoothing differs.
    SimulatedDataset train_ds = make(ni, cfg.n_train_problems, 11, 0);
    SimulatedDataset val_ds =
        make(ni, cfg.n_val_problems, 12, 1000000);
    GruParams init = GruParams::init(16, 4, cfg.base.penalty,
                                     Rng::derive(cfg.train.seed, 71));
    init.norm = {train_ds.mean_volume, train_ds.mean_price};
    TrainConfig t = cfg.train;
    t.seed = Rng::derive(cfg.train.seed, 210 + ni);
    TrainResult tr = train_gru(init, train_ds.problems, val_ds.problems, t);
    save_gru_model(out_dir / ("model_" + names[ni] + ".txt"), tr.params);
    save_training_log(out_dir / ("train_" + names[ni] + ".csv"), tr.log);
    models[ni] = tr.params;
    have[ni] = true;
  }
  res.model_low = models[0];
  res.model_high = models[1];
  (void)have;

  // One shared set of evaluation paths, smoothed both ways.
  SimulatedDataset evals[2] = {make(0, cfg.n_eval_episodes, 13, 2000000),
                               make(1, cfg.n_eval_episodes, 13, 2000000)};

  std::vector<double> cost[2][2], shortfall[2][2];
  for (int mi = 0; mi < 2; ++mi) {
    for (int ei = 0; ei < 2; ++ei) {
      std::vector<EpisodeTrace> traces;
      traces.reserve(evals[ei].problems.size());
      for (const auto& prob : evals[ei].problems) {
        GruController c(models[mi]);
        traces.push_back(eval_problem(c, prob));
        cost[mi][ei].push_back(traces.back().final_cost());
        shortfall[mi][ei].push_back(
            traces.back().total_volume() < prob.goal ? 1.0 : 0.0);
      }
      res.report.push_back(compute_metrics(
          "noise_cross", "model_" + names[mi] + "_eval_" + names[ei],
          traces));
    }
  }

  const std::uint64_t cs = cfg.base.seed;
  res.excess_low_eval =
      bootstrap_paired_diff(cost[1][0], cost[0][0], 1000, Rng::derive(cs, 301));
  res.excess_high_eval =
      bootstrap_paired_diff(cost[0][1], cost[1][1], 1000, Rng::derive(cs, 302));
  res.shortfall_rise_low_model = bootstrap_paired_diff(
      shortfall[0][1], shortfall[0][0], 1000, Rng::derive(cs, 303));
  res.shortfall_rise_high_model = bootstrap_paired_diff(
      shortfall[1][1], shortfall[1][0], 1000, Rng::derive(cs, 304));

  save_report(out_dir / "report.csv", res.report);
  const std::vector<ComparisonRow> cis = {
      {"noise_cross", "cost_excess_mismatched_eval_low", res.excess_low_eval},
      {"noise_cross", "cost_excess_mismatched_eval_high",
       res.excess_high_eval},
      {"noise_cross", "shortfall_rise_model_low",
       res.shortfall_rise_low_model},
      {"noise_cross", "shortfall_rise_model_high",
       res.shortfall_rise_high_model}};
  save_comparisons(out_dir / "cis.csv", cis);
  return res;
}

PiVsRnnResult experiment_pi_vs_rnn(const PiVsRnnConfig& cfg,
                                   const std::filesystem::path& out_dir) {
  return experiment_pi_vs_rnn(cfg, gen_production(cfg.data), out_dir);
}

PiVsRnnResult experiment_pi_vs_rnn(const PiVsRnnConfig& cfg,
                                   const ProductionDataset& data,
                                   const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  PiVsRnnResult res;

  GruParams init = GruParams::init(16, 4, data.config.penalty,
                                   Rng::derive(cfg.gru_train.seed, 73));
  init.norm = {data.mean_volume, data.mean_price};
  TrainResult tr = train_gru(init, data.train, data.validation, cfg.gru_train);
  save_gru_model(out_dir / "model_rnn.txt", tr.params);
  save_training_log(out_dir / "train_rnn.csv", tr.log);
  res.model = tr.params;
  res.gru_diverged = tr.diverged;

  PiParams pi_init = default_pi_params(mean_goal_pace(data.train), data.mean_price);
  pi_init.reference = data.reference;
  PiTrainResult pr = tune_pi(pi_init, data.config.penalty, data.train,
                             data.validation, cfg.pi_train);
  save_pi_model(out_dir / "model_pi.txt", pr.params);
  save_training_log(out_dir / "train_pi.csv", pr.log);
  res.pi_params = pr.params;

  std::vector<ComparisonRow> cis;
  for (std::size_t b = 0; b < data.eval_buckets.size(); ++b) {
    const auto& [goal, bucket] = data.eval_buckets[b];
    std::vector<EpisodeTrace> pi_traces, rnn_traces;
    std::vector<double> pi_cost, rnn_cost;
    for (const auto& prob : bucket) {
      PiController pc(pr.params);
      pi_traces.push_back(eval_problem(pc, prob));
      pi_cost.push_back(pi_traces.back().final_cost());
      GruController gc(tr.params);
      rnn_traces.push_back(eval_problem(gc, prob));
      rnn_cost.push_back(rnn_traces.back().final_cost());
    }
    BucketComparison cmp;
    cmp.goal = goal;
    cmp.pi = compute_metrics("pi_vs_rnn", "pi_goal" + label(goal), pi_traces);
    cmp.rnn =
        compute_metrics("pi_vs_rnn", "rnn_goal" + label(goal), rnn_traces);
    cmp.cost_ratio = bootstrap_paired_ratio(
        rnn_cost, pi_cost, 1000, Rng::derive(data.config.seed, 310 + b));
    res.report.push_back(cmp.pi);
    res.report.push_back(cmp.rnn);
    cis.push_back(
        {"pi_vs_rnn", "cost_ratio_goal" + label(goal), cmp.cost_ratio});
    res.buckets.push_back(std::move(cmp));
  }
  save_report(out_dir / "report.csv", res.report);
  save_comparisons(out_dir / "cis.csv", cis);
  return res;
}

}  // namespace bidlab
