#include "bidlab/cli.hpp"

#include <cstdlib>
#include <deque>
#include <filesystem>
#include <functional>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bidlab/bench.hpp"
#include "bidlab/dp_solvers.hpp"
#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab::cli {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

struct CommonOpts {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  std::uint64_t seed = 0;
  bool has_seed = false;
  int threads = 0;
  bool has_threads = false;
};

fs::path output_root() {
  if (const char* env = std::getenv("BIDLAB_OUT"); env && *env)
    return fs::path(env);
  return fs::path(".");
}

// ------------------------------------------------------------------
// Config resolution: defaults <- config file <- --set overrides <- flags.
// Keys absent from the default tree are rejected.

void check_keys(const json& cfg, const json& defaults,
                const std::string& prefix) {
  if (!cfg.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : cfg.items()) {
    if (!defaults.contains(k))
      throw ConfigError("unknown config key: " + prefix + k);
    if (defaults.at(k).is_object()) check_keys(v, defaults.at(k), prefix + k + ".");
  }
}

void merge_into(json& base, const json& patch) {
  for (const auto& [k, v] : patch.items()) {
    if (v.is_object() && base.contains(k) && base[k].is_object())
      merge_into(base[k], v);
    else
      base[k] = v;
  }
}

json parse_set_value(const std::string& raw) {
  try {
    return json::parse(raw);
  } catch (const json::exception&) {
    return json(raw);  // bare strings need no quoting
  }
}

void apply_set(json& cfg, const json& defaults, const std::string& kv) {
  const auto eq = kv.find('=');
  if (eq == std::string::npos || eq == 0)
    throw ConfigError("--set expects key=value, got: " + kv);
  const std::string key = kv.substr(0, eq);
  const json val = parse_set_value(kv.substr(eq + 1));

  const json* d = &defaults;
  json* c = &cfg;
  std::size_t pos = 0;
  while (true) {
    const std::size_t dot = key.find('.', pos);
    const std::string part =
        key.substr(pos, dot == std::string::npos ? std::string::npos
                                                 : dot - pos);
    if (part.empty()) throw ConfigError("bad --set key: " + key);
    if (!d->contains(part)) throw ConfigError("unknown config key: " + key);
    if (dot == std::string::npos) {
      (*c)[part] = val;
      return;
    }
    d = &d->at(part);
    if (!d->is_object())
      throw ConfigError("not a config section: " + key.substr(0, dot));
    c = &(*c)[part];
    pos = dot + 1;
  }
}

json resolve_config(const json& defaults, const CommonOpts& o) {
  json cfg = defaults;
  if (!o.config_path.empty()) {
    json file;
    try {
      file = json::parse(read_text_file(o.config_path));
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config parse: ") + e.what());
    }
    check_keys(file, defaults, "");
    merge_into(cfg, file);
  }
  for (const auto& kv : o.sets) apply_set(cfg, defaults, kv);
  if (o.has_seed && cfg.contains("seed")) cfg["seed"] = o.seed;
  if (o.has_threads) {
    for (const char* sec : {"train", "gru_train", "pi_train"})
      if (cfg.contains(sec)) cfg[sec]["threads"] = o.threads;
  }
  return cfg;
}

// Creates the output directory and echoes the resolved config into it.
fs::path prepare_out(const CommonOpts& o, const std::string& default_name,
                     const std::string& command, const json& resolved) {
  fs::path out = o.out.empty() ? fs::path(default_name) : fs::path(o.out);
  if (!out.is_absolute()) out = output_root() / out;
  fs::create_directories(out);
  write_text_file(out / ("config_" + command + ".json"),
                  resolved.dump(2) + "\n");
  return out;
}

// ------------------------------------------------------------------
// Shared config fragments.

json noise_defaults(const std::string& family, double shape) {
  return {{"family", family}, {"shape", shape}};
}

BidNoise noise_from_cfg(const json& j) {
  const std::string family = j.at("family").get<std::string>();
  const double shape = j.at("shape").get<double>();
  if (family == "dirac") return BidNoise::dirac();
  if (family == "gamma") return BidNoise::gamma_k(shape);
  if (family == "lognormal") return BidNoise::lognormal_s(shape);
  throw ConfigError("unknown noise family: " + family);
}

json simulated_defaults() {
  return {{"n_problems", 20000},
          {"n_periods", 96},
          {"base_intensity", 10.0},
          {"volume_sigma", 0.0},
          {"goal", 100.0},
          {"penalty", 2.0},
          {"shock_t0", -1},
          {"shock_factor", 1.0},
          {"price_median", 1.0},
          {"price_sigma", 0.5},
          {"bid_noise", noise_defaults("gamma", 4.0)}};
}

SimulatedConfig simulated_from_cfg(const json& j, std::uint64_t seed) {
  SimulatedConfig c;
  c.n_problems = j.at("n_problems").get<int>();
  c.n_periods = j.at("n_periods").get<int>();
  c.base_intensity = j.at("base_intensity").get<double>();
  c.volume_sigma = j.at("volume_sigma").get<double>();
  c.goal = j.at("goal").get<double>();
  c.penalty = j.at("penalty").get<double>();
  c.shock_t0 = j.at("shock_t0").get<int>();
  c.shock_factor = j.at("shock_factor").get<double>();
  c.price_median = j.at("price_median").get<double>();
  c.price_sigma = j.at("price_sigma").get<double>();
  c.bid_noise = noise_from_cfg(j.at("bid_noise"));
  c.seed = seed;
  return c;
}

json production_defaults() {
  return {{"n_placements", 24},
          {"n_days", 8},
          {"train_days", 6},
          {"n_periods", 288},
          {"n_train_problems", 20000},
          {"n_val_problems", 500},
          {"eval_goals", json::array({100.0, 500.0, 1000.0, 1500.0})},
          {"eval_episodes_per_goal", 500},
          {"goal_min", 10.0},
          {"goal_max", 1000.0},
          {"penalty", 2.0},
          {"bid_noise", noise_defaults("gamma", 4.0)}};
}

ProductionConfig production_from_cfg(const json& j, std::uint64_t seed) {
  ProductionConfig c;
  c.n_placements = j.at("n_placements").get<int>();
  c.n_days = j.at("n_days").get<int>();
  c.train_days = j.at("train_days").get<int>();
  c.n_periods = j.at("n_periods").get<int>();
  c.n_train_problems = j.at("n_train_problems").get<int>();
  c.n_val_problems = j.at("n_val_problems").get<int>();
  c.eval_goals = j.at("eval_goals").get<std::vector<double>>();
  c.eval_episodes_per_goal = j.at("eval_episodes_per_goal").get<int>();
  c.goal_min = j.at("goal_min").get<double>();
  c.goal_max = j.at("goal_max").get<double>();
  c.penalty = j.at("penalty").get<double>();
  c.bid_noise = noise_from_cfg(j.at("bid_noise"));
  c.seed = seed;
  return c;
}

json train_defaults(double alpha0, double clip) {
  return {{"batch_size", 100},
          {"epochs", 1},
          {"alpha0", alpha0},
          {"decay_eta", 0.5},
          {"decay_steps", 400},
          {"clip_threshold", clip},
          {"validation_period", 200},
          {"threads", 1}};
}

TrainConfig train_from_cfg(const json& j, std::uint64_t seed) {
  TrainConfig c;
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.alpha0 = j.at("alpha0").get<double>();
  c.decay_eta = j.at("decay_eta").get<double>();
  c.decay_steps = j.at("decay_steps").get<int>();
  c.clip_threshold = j.at("clip_threshold").get<double>();
  c.validation_period = j.at("validation_period").get<int>();
  c.threads = j.at("threads").get<int>();
  c.seed = seed;
  return c;
}

json grid_defaults(double lo, double hi, int n) {
  return {{"min", lo}, {"max", hi}, {"n", n}};
}

std::vector<double> grid_from_cfg(const json& j) {
  return linspace(j.at("min").get<double>(), j.at("max").get<double>(),
                  j.at("n").get<int>());
}

json market_defaults() {
  return {{"type", "gaussian"}, {"mean", 1.0}, {"sd", 0.5}, {"file", ""}};
}

// Keeps a loaded landscape alive behind the returned response functions.
MarketResponse market_from_cfg(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "gaussian")
    return gaussian_market(j.at("mean").get<double>(),
                           j.at("sd").get<double>());
  if (type == "landscape") {
    const std::string file = j.at("file").get<std::string>();
    if (file.empty()) throw ConfigError("market.file required");
    return response_of(LandscapeProcess::load_csv(file).at(0));
  }
  throw ConfigError("unknown market type: " + type);
}

void require_dataset(const std::string& path) {
  if (path.empty()) throw ConfigError("dataset path required");
  if (!fs::exists(fs::path(path) / "manifest.json"))
    throw ConfigError("dataset not found: " + path);
}

// Training inputs common to train and tune-pi, from either dataset kind.
struct LoadedDataset {
  std::vector<BiddingProblem> train;
  std::vector<BiddingProblem> validation;
  double mean_volume = 0.0;
  double mean_price = 0.0;
  double penalty = 0.0;
  HarmonicCurve reference;
};

LoadedDataset load_for_training(const std::string& path, int n_val) {
  require_dataset(path);
  LoadedDataset out;
  if (dataset_is_production(path)) {
    ProductionDataset ds = load_production_dataset(path);
    out.train = std::move(ds.train);
    out.validation = std::move(ds.validation);
    out.mean_volume = ds.mean_volume;
    out.mean_price = ds.mean_price;
    out.penalty = ds.config.penalty;
    out.reference = ds.reference;
    return out;
  }
  SimulatedDataset ds = load_simulated_dataset(path);
  const int n = static_cast<int>(ds.problems.size());
  if (n_val < 1 || n_val >= n)
    throw ConfigError("n_val must be in [1, n_problems)");
  out.train.assign(ds.problems.begin(), ds.problems.end() - n_val);
  out.validation.assign(ds.problems.end() - n_val, ds.problems.end());
  out.mean_volume = ds.mean_volume;
  out.mean_price = ds.mean_price;
  out.penalty = ds.config.penalty;
  return out;
}

// ------------------------------------------------------------------
// Subcommands.

void cmd_gen_data(const CommonOpts& o) {
  const json defaults = {{"kind", "simulated"},
                         {"seed", 1},
                         {"simulated", simulated_defaults()},
                         {"production", production_defaults()}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "dataset", "gen-data", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  const std::string kind = cfg.at("kind").get<std::string>();
  if (kind == "simulated") {
    SimulatedDataset ds =
        gen_simulated(simulated_from_cfg(cfg.at("simulated"), seed));
    save_simulated_dataset(out, ds);
    std::cout << "wrote simulated dataset: " << ds.problems.size()
              << " problems, " << ds.config.n_periods << " periods -> "
              << out.string() << "\n";
  } else if (kind == "production") {
    ProductionDataset ds =
        gen_production(production_from_cfg(cfg.at("production"), seed));
    save_production_dataset(out, ds);
    std::size_t n_eval = 0;
    for (const auto& [g, b] : ds.eval_buckets) n_eval += b.size();
    std::cout << "wrote production dataset: " << ds.train.size()
              << " train / " << ds.validation.size() << " val / " << n_eval
              << " eval problems -> " << out.string() << "\n";
  } else {
    throw ConfigError("kind must be simulated or production");
  }
}

void cmd_train(const CommonOpts& o) {
  const json defaults = {{"seed", 1},
                         {"dataset", ""},
                         {"n_val", 200},
                         {"state_dim", 16},
                         {"train", train_defaults(0.1, 5.0)}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "train", "train", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  LoadedDataset ds = load_for_training(cfg.at("dataset").get<std::string>(),
                                       cfg.at("n_val").get<int>());

  GruParams init = GruParams::init(cfg.at("state_dim").get<int>(), 4,
                                   ds.penalty, Rng::derive(seed, 1));
  init.norm = {ds.mean_volume, ds.mean_price};
  TrainConfig tc = train_from_cfg(cfg.at("train"), Rng::derive(seed, 2));
  TrainResult tr = train_gru(init, ds.train, ds.validation, tc);
  save_gru_model(out / "model.txt", tr.params);
  save_training_log(out / "training_log.csv", tr.log);
  std::cout << "trained " << tr.steps << " steps, best val loss "
            << fmt_double(tr.best_val_loss) << ", final val loss "
            << fmt_double(tr.final_val_loss) << " -> "
            << (out / "model.txt").string() << "\n";
  if (tr.diverged)
    throw std::runtime_error(
        "training diverged; best checkpoint saved to " +
        (out / "model.txt").string());
}

void cmd_tune_pi(const CommonOpts& o) {
  const json defaults = {{"seed", 1},
                         {"dataset", ""},
                         {"n_val", 200},
                         {"train", train_defaults(0.01, 1.0)}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "tune-pi", "tune-pi", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();
  LoadedDataset ds = load_for_training(cfg.at("dataset").get<std::string>(),
                                       cfg.at("n_val").get<int>());

  PiParams init = default_pi_params(mean_goal_pace(ds.train), ds.mean_price);
  init.reference = ds.reference;
  TrainConfig tc = train_from_cfg(cfg.at("train"), Rng::derive(seed, 2));
  PiTrainResult pr = tune_pi(init, ds.penalty, ds.train, ds.validation, tc);
  save_pi_model(out / "model_pi.txt", pr.params);
  save_training_log(out / "training_log.csv", pr.log);
  std::cout << "tuned gains theta_p=" << fmt_double(pr.params.theta_p)
            << " theta_i=" << fmt_double(pr.params.theta_i)
            << ", best val loss " << fmt_double(pr.best_val_loss) << " -> "
            << (out / "model_pi.txt").string() << "\n";
  if (pr.diverged)
    throw std::runtime_error("PI tuning diverged; best checkpoint saved");
}

void cmd_solve_dp(const CommonOpts& o) {
  const json defaults = {{"n_periods", 96},
                         {"penalty", 2.0},
                         {"dt", 1.0},
                         {"g", grid_defaults(-0.5, 4.0, 81)},
                         {"h", grid_defaults(0.0, 20.0, 41)},
                         {"bid_levels", 81},
                         {"market", market_defaults()},
                         {"kernel",
                          {{"type", "deterministic"},
                           {"sigma", 0.0},
                           {"drift", 0.0}}},
                         {"stride", {{"t", 1}, {"g", 1}, {"h", 1}}}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "solve-dp", "solve-dp", cfg);

  const double penalty = cfg.at("penalty").get<double>();
  const auto g_grid = grid_from_cfg(cfg.at("g"));
  const auto h_grid = grid_from_cfg(cfg.at("h"));
  const auto bid_grid = linspace(0.0, penalty, cfg.at("bid_levels").get<int>());
  const MarketResponse market = market_from_cfg(cfg.at("market"));

  const auto& kj = cfg.at("kernel");
  std::unique_ptr<TransitionKernel> kernel;
  const std::string ktype = kj.at("type").get<std::string>();
  if (ktype == "deterministic")
    kernel = std::make_unique<DeterministicKernel>(kj.at("drift").get<double>());
  else if (ktype == "gauss_hermite")
    kernel = std::make_unique<GaussHermiteKernel>(kj.at("drift").get<double>(),
                                                  kj.at("sigma").get<double>());
  else
    throw ConfigError("unknown kernel type: " + ktype);

  PolicyField field = solve_bellman(cfg.at("n_periods").get<int>(), g_grid,
                                    h_grid, market, *kernel, penalty,
                                    bid_grid, cfg.at("dt").get<double>());
  field.save_csv(out / "field.csv", cfg.at("stride").at("t").get<int>(),
                 cfg.at("stride").at("g").get<int>(),
                 cfg.at("stride").at("h").get<int>());
  std::cout << "dp field: " << field.t_grid().size() << " x "
            << field.g_grid().size() << " x " << field.h_grid().size()
            << ", bid range [" << fmt_double(field.min_bid()) << ", "
            << fmt_double(field.max_bid()) << "] -> "
            << (out / "field.csv").string() << "\n";
}

void cmd_solve_pde(const CommonOpts& o) {
  const json defaults = {{"horizon", 1.0},
                         {"sigma", 0.0},
                         {"drift", 0.0},
                         {"penalty", 2.0},
                         {"n_slices", 200},
                         {"dt", 0.0},
                         {"cfl_safety", 0.9},
                         {"g", grid_defaults(-0.5, 4.0, 201)},
                         {"h", grid_defaults(0.0, 20.0, 101)},
                         {"market", market_defaults()},
                         {"stride", {{"t", 1}, {"g", 1}, {"h", 1}}}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "solve-pde", "solve-pde", cfg);

  PdeConfig pc;
  pc.horizon = cfg.at("horizon").get<double>();
  pc.sigma = cfg.at("sigma").get<double>();
  pc.drift = cfg.at("drift").get<double>();
  pc.penalty = cfg.at("penalty").get<double>();
  pc.n_slices = cfg.at("n_slices").get<int>();
  pc.dt = cfg.at("dt").get<double>();
  pc.cfl_safety = cfg.at("cfl_safety").get<double>();
  const auto g_grid = grid_from_cfg(cfg.at("g"));
  const auto h_grid = grid_from_cfg(cfg.at("h"));
  const MarketResponse market = market_from_cfg(cfg.at("market"));

  PolicyField field = solve_pde(pc, g_grid, h_grid, market);
  field.save_csv(out / "field.csv", cfg.at("stride").at("t").get<int>(),
                 cfg.at("stride").at("g").get<int>(),
                 cfg.at("stride").at("h").get<int>());
  std::cout << "pde field: " << field.t_grid().size() << " slices, bid range ["
            << fmt_double(field.min_bid()) << ", "
            << fmt_double(field.max_bid()) << "] -> "
            << (out / "field.csv").string() << "\n";
}

void cmd_run_episode(const CommonOpts& o) {
  const json defaults = {
      {"seed", 1},
      {"model", ""},
      {"mode", "expected"},
      {"goal", 100.0},
      {"penalty", 2.0},
      {"landscape",
       {{"file", ""}, {"price_median", 1.0}, {"price_sigma", 0.5}}},
      {"smooth", noise_defaults("dirac", 0.0)},
      {"scenario",
       {{"n_periods", 96},
        {"base_intensity", 10.0},
        {"volume_sigma", 0.0},
        {"shocks", json::array()}}}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "episode", "run-episode", cfg);

  const std::string model_path = cfg.at("model").get<std::string>();
  if (model_path.empty()) throw ConfigError("model path required");
  if (!fs::exists(model_path))
    throw ConfigError("model not found: " + model_path);
  std::unique_ptr<Controller> controller = load_controller(model_path);

  const auto& lj = cfg.at("landscape");
  LandscapeProcess raw =
      lj.at("file").get<std::string>().empty()
          ? LandscapeProcess(lognormal_landscape(
                default_price_grid(), lj.at("price_median").get<double>(),
                lj.at("price_sigma").get<double>()))
          : LandscapeProcess::load_csv(lj.at("file").get<std::string>());
  LandscapeProcess process =
      smooth_process(raw, noise_from_cfg(cfg.at("smooth")));

  const auto& sj = cfg.at("scenario");
  VolumeScenario scen = VolumeScenario::constant(
      sj.at("n_periods").get<int>(), sj.at("base_intensity").get<double>());
  scen.with_noise(sj.at("volume_sigma").get<double>());
  for (const auto& shock : sj.at("shocks")) {
    if (!shock.is_object() || shock.size() != 2 || !shock.contains("t0") ||
        !shock.contains("factor"))
      throw ConfigError("each shock needs exactly {t0, factor}");
    scen.with_shock(shock.at("t0").get<int>(),
                    shock.at("factor").get<double>());
  }

  const std::string mode_s = cfg.at("mode").get<std::string>();
  FeedbackMode mode;
  if (mode_s == "expected")
    mode = FeedbackMode::expected;
  else if (mode_s == "sampled")
    mode = FeedbackMode::sampled;
  else
    throw ConfigError("mode must be expected or sampled");

  EpisodeTrace trace = run_episode(
      *controller, scen, process, cfg.at("goal").get<double>(),
      cfg.at("penalty").get<double>(), mode,
      cfg.at("seed").get<std::uint64_t>());
  trace.save_csv(out / "trace.csv");
  std::cout << "episode: cost " << fmt_double(trace.final_cost())
            << " (spend " << fmt_double(trace.total_spend()) << ", penalty "
            << fmt_double(trace.penalty_paid()) << "), volume "
            << fmt_double(trace.total_volume()) << " of "
            << fmt_double(trace.goal) << " -> "
            << (out / "trace.csv").string() << "\n";
}

void cmd_experiment_shock_grid(const CommonOpts& o) {
  const json defaults = {
      {"seed", 1},
      {"train_sigmas", json::array({0.0, 0.2, 1.0, 5.0, 10.0})},
      {"shock_factors", json::array({1.0, 1.5, 2.0, 3.0, 5.0, 10.0})},
      {"shock_t0", 65},
      {"n_val_problems", 200},
      {"base", simulated_defaults()},
      {"train", train_defaults(0.1, 5.0)}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "shock-grid", "shock-grid", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  ShockGridConfig c;
  c.train_sigmas = cfg.at("train_sigmas").get<std::vector<double>>();
  c.shock_factors = cfg.at("shock_factors").get<std::vector<double>>();
  c.shock_t0 = cfg.at("shock_t0").get<int>();
  c.n_val_problems = cfg.at("n_val_problems").get<int>();
  c.base = simulated_from_cfg(cfg.at("base"), seed);
  c.train = train_from_cfg(cfg.at("train"), seed);

  ShockGridResult res = experiment_shock_grid(c, out);
  std::cout << "shock grid: " << res.report.size() << " cells -> "
            << (out / "report.csv").string() << "\n";
  for (std::size_t si = 0; si < c.train_sigmas.size(); ++si)
    if (res.diverged[si])
      std::cout << "  warning: sigma " << c.train_sigmas[si]
                << " training diverged; best checkpoint used\n";
}

void cmd_experiment_noise_cross(const CommonOpts& o) {
  const json defaults = {{"seed", 1},
                         {"low_noise", 0.1},
                         {"high_noise", 10.0},
                         {"volume_sigma", 1.0},
                         {"n_train_problems", 20000},
                         {"n_val_problems", 200},
                         {"n_eval_episodes", 2000},
                         {"base", simulated_defaults()},
                         {"train", train_defaults(0.1, 5.0)}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "noise-cross", "noise-cross", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  NoiseCrossConfig c;
  c.low_noise = cfg.at("low_noise").get<double>();
  c.high_noise = cfg.at("high_noise").get<double>();
  c.volume_sigma = cfg.at("volume_sigma").get<double>();
  c.n_train_problems = cfg.at("n_train_problems").get<int>();
  c.n_val_problems = cfg.at("n_val_problems").get<int>();
  c.n_eval_episodes = cfg.at("n_eval_episodes").get<int>();
  c.base = simulated_from_cfg(cfg.at("base"), seed);
  c.train = train_from_cfg(cfg.at("train"), seed);

  NoiseCrossResult res = experiment_noise_cross(c, out);
  auto show = [](const char* name, const BootstrapCi& ci) {
    std::cout << "  " << name << ": " << fmt_double(ci.point) << " ["
              << fmt_double(ci.lo) << ", " << fmt_double(ci.hi) << "]\n";
  };
  std::cout << "noise cross -> " << (out / "report.csv").string() << "\n";
  show("cost excess, low-noise eval", res.excess_low_eval);
  show("cost excess, high-noise eval", res.excess_high_eval);
  show("shortfall rise, low model", res.shortfall_rise_low_model);
  show("shortfall rise, high model", res.shortfall_rise_high_model);
}

void cmd_experiment_pi_vs_rnn(const CommonOpts& o) {
  const json defaults = {{"seed", 1},
                         {"dataset", ""},
                         {"production", production_defaults()},
                         {"gru_train", train_defaults(0.1, 5.0)},
                         {"pi_train", train_defaults(0.01, 1.0)}};
  const json cfg = resolve_config(defaults, o);
  const fs::path out = prepare_out(o, "pi-vs-rnn", "pi-vs-rnn", cfg);
  const auto seed = cfg.at("seed").get<std::uint64_t>();

  PiVsRnnConfig c;
  c.data = production_from_cfg(cfg.at("production"), seed);
  c.gru_train = train_from_cfg(cfg.at("gru_train"), seed);
  c.pi_train = train_from_cfg(cfg.at("pi_train"), Rng::derive(seed, 3));

  PiVsRnnResult res;
  const std::string ds_path = cfg.at("dataset").get<std::string>();
  if (ds_path.empty()) {
    res = experiment_pi_vs_rnn(c, out);
  } else {
    require_dataset(ds_path);
    if (!dataset_is_production(ds_path))
      throw ConfigError("pi-vs-rnn needs a production dataset");
    res = experiment_pi_vs_rnn(c, load_production_dataset(ds_path), out);
  }
  std::cout << "pi vs rnn -> " << (out / "report.csv").string() << "\n";
  for (const auto& b : res.buckets)
    std::cout << "  goal " << fmt_double(b.goal) << ": cost ratio "
              << fmt_double(b.cost_ratio.point) << " ["
              << fmt_double(b.cost_ratio.lo) << ", "
              << fmt_double(b.cost_ratio.hi) << "]\n";
  if (res.gru_diverged)
    std::cout << "  warning: training diverged; best checkpoint used\n";
}

void print_table(const std::string& body) {
  std::vector<std::vector<std::string>> rows;
  std::size_t pos = 0;
  while (pos < body.size()) {
    std::size_t e = body.find('\n', pos);
    if (e == std::string::npos) e = body.size();
    const std::string line = body.substr(pos, e - pos);
    pos = e + 1;
    if (!line.empty()) rows.push_back(split_csv(line));
  }
  std::vector<std::size_t> width;
  for (const auto& r : rows)
    for (std::size_t i = 0; i < r.size(); ++i) {
      if (width.size() <= i) width.resize(i + 1, 0);
      width[i] = std::max(width[i], r[i].size());
    }
  for (const auto& r : rows) {
    std::string line;
    for (std::size_t i = 0; i < r.size(); ++i) {
      line += r[i];
      if (i + 1 < r.size())
        line += std::string(width[i] - r[i].size() + 2, ' ');
    }
    std::cout << line << "\n";
  }
}

void cmd_report(const CommonOpts& o) {
  const json defaults = {{"dir", ""}};
  const json cfg = resolve_config(defaults, o);
  const std::string dir = cfg.at("dir").get<std::string>();
  if (dir.empty()) throw ConfigError("report needs dir");
  if (!fs::exists(fs::path(dir) / "report.csv"))
    throw ConfigError("no report.csv in " + dir);
  CommonOpts echo = o;
  if (echo.out.empty()) echo.out = dir;
  prepare_out(echo, dir, "report", cfg);
  print_table(read_text_file(fs::path(dir) / "report.csv"));
  if (fs::exists(fs::path(dir) / "cis.csv")) {
    std::cout << "\n";
    print_table(read_text_file(fs::path(dir) / "cis.csv"));
  }
}

// ------------------------------------------------------------------

struct Common {
  CommonOpts o;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* threads_opt = nullptr;
};

void add_common(CLI::App* sub, Common& c,
                const std::function<void(const CommonOpts&)>& fn) {
  sub->add_option("--config", c.o.config_path, "JSON config file");
  sub->add_option("--set", c.o.sets,
                  "config override key=value (dot paths, repeatable)");
  sub->add_option("--out", c.o.out, "output directory");
  c.seed_opt = sub->add_option("--seed", c.o.seed, "root random seed");
  c.threads_opt =
      sub->add_option("--threads", c.o.threads, "worker thread cap");
  sub->callback([&c, fn] {
    c.o.has_seed = c.seed_opt->count() > 0;
    c.o.has_threads = c.threads_opt->count() > 0;
    fn(c.o);
  });
}

}  // namespace

int run(int argc, const char* const* argv) {
  CLI::App app{"bid-control laboratory for goal-driven ad delivery"};
  app.require_subcommand(1);
  std::deque<Common> commons;
  auto make = [&](CLI::App* parent, const std::string& name,
                  const std::string& desc,
                  std::function<void(const CommonOpts&)> fn) {
    CLI::App* sub = parent->add_subcommand(name, desc);
    add_common(sub, commons.emplace_back(), fn);
    return sub;
  };

  make(&app, "gen-data", "generate a dataset directory", cmd_gen_data);
  make(&app, "train", "train the recurrent controller", cmd_train);
  make(&app, "tune-pi", "tune the PI controller gains", cmd_tune_pi);
  CLI::App* solve = app.add_subcommand("solve", "compute a policy field");
  solve->require_subcommand(1);
  make(solve, "dp", "backward-induction policy", cmd_solve_dp);
  make(solve, "pde", "finite-difference policy", cmd_solve_pde);
  make(&app, "run-episode", "roll a saved model through one episode",
       cmd_run_episode);
  CLI::App* exp = app.add_subcommand("experiment", "run a full study");
  exp->require_subcommand(1);
  make(exp, "shock-grid", "volume-shock robustness grid",
       cmd_experiment_shock_grid);
  make(exp, "noise-cross", "bid-noise train/eval cross",
       cmd_experiment_noise_cross);
  make(exp, "pi-vs-rnn", "PI baseline vs trained controller",
       cmd_experiment_pi_vs_rnn);
  make(&app, "report", "print report tables from an output directory",
       cmd_report);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    // Modules validate their own inputs; surface those as config errors.
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const CflError& e) {
    std::cerr << "runtime error: " << e.what() << " (largest stable dt: "
              << fmt_double(e.suggested_dt) << ")\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}

int run(const std::vector<std::string>& args) {
  std::vector<const char*> argv;
  argv.push_back("bidctl");
  for (const auto& a : args) argv.push_back(a.c_str());
  return run(static_cast<int>(argv.size()), argv.data());
}

}  // namespace bidlab::cli
