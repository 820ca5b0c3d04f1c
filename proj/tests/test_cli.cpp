#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <doctest.h>
#include <json.hpp>

#include "bidlab/bench.hpp"
#include "bidlab/cli.hpp"
#include "bidlab/controllers.hpp"
#include "bidlab/dp_solvers.hpp"
#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

using namespace bidlab;

namespace {

// All relative --out paths land under one scratch root.
const std::filesystem::path& out_root() {
  static const std::filesystem::path root = [] {
    auto dir = std::filesystem::temp_directory_path() / "bidlab_cli_tests";
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    setenv("BIDLAB_OUT", dir.c_str(), 1);
    return dir;
  }();
  return root;
}

std::filesystem::path out_path(const char* name) { return out_root() / name; }

int run_cli(std::vector<std::string> args) {
  out_root();
  return cli::run(args);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  return {std::istreambuf_iterator<char>(in),
          std::istreambuf_iterator<char>()};
}

// Small simulated dataset most commands below run against.
const std::string& tiny_dataset() {
  static const std::string name = [] {
    REQUIRE(run_cli({"gen-data", "--out", "data_tiny", "--seed", "5",
                     "--set", "simulated.n_problems=12",
                     "--set", "simulated.n_periods=8",
                     "--set", "simulated.goal=40"}) == 0);
    return std::string("data_tiny");
  }();
  return name;
}

}  // namespace

TEST_CASE("help and parse failures use the documented exit codes") {
  CHECK(run_cli({"--help"}) == 0);
  CHECK(run_cli({"no-such-command"}) == 2);
  CHECK(run_cli({}) == 2);
  CHECK(run_cli({"solve"}) == 2);  // solver kind required
}

TEST_CASE("unknown config keys are rejected up front") {
  CHECK(run_cli({"gen-data", "--out", "bad1", "--set", "typo_key=1"}) == 2);
  CHECK(run_cli({"gen-data", "--out", "bad2", "--set",
                 "simulated.goal"}) == 2);  // missing '='
  const auto cfg = out_path("bad_file.json");
  write_text_file(cfg, "{\"simulated\": {\"no_such_field\": 3}}\n");
  CHECK(run_cli({"gen-data", "--out", "bad3", "--config",
                 cfg.string()}) == 2);
  const auto broken = out_path("broken.json");
  write_text_file(broken, "{not json\n");
  CHECK(run_cli({"gen-data", "--out", "bad4", "--config",
                 broken.string()}) == 2);
}

TEST_CASE("module validation surfaces as a config failure") {
  CHECK(run_cli({"gen-data", "--out", "bad_prod", "--set",
                 "kind=production", "--set",
                 "production.n_placements=0"}) == 2);
}

TEST_CASE("gen-data is reproducible and echoes its resolved config") {
  REQUIRE(run_cli({"gen-data", "--out", "data_a", "--seed", "5",
                   "--set", "simulated.n_problems=12",
                   "--set", "simulated.n_periods=8",
                   "--set", "simulated.goal=40"}) == 0);
  REQUIRE(run_cli({"gen-data", "--out", "data_b", "--seed", "5",
                   "--set", "simulated.n_problems=12",
                   "--set", "simulated.n_periods=8",
                   "--set", "simulated.goal=40"}) == 0);
  CHECK(slurp(out_path("data_a/manifest.json")) ==
        slurp(out_path("data_b/manifest.json")));
  CHECK(slurp(out_path("data_a/problems.csv")) ==
        slurp(out_path("data_b/problems.csv")));

  // The echoed config carries every default, not only the overrides.
  const auto echoed =
      nlohmann::json::parse(slurp(out_path("data_a/config_gen-data.json")));
  CHECK(echoed.at("seed").get<int>() == 5);
  CHECK(echoed.at("simulated").at("n_problems").get<int>() == 12);
  CHECK(echoed.at("simulated").at("price_median").get<double>() == 1.0);
  CHECK(echoed.at("kind").get<std::string>() == "simulated");

  SimulatedDataset ds = load_simulated_dataset(out_path("data_a"));
  CHECK(ds.problems.size() == 12);
  CHECK(ds.config.goal == 40.0);
}

TEST_CASE("set overrides beat the config file and the seed flag wins") {
  const auto cfg = out_path("gen_cfg.json");
  write_text_file(cfg,
                  "{\"seed\": 3, \"simulated\": {\"n_problems\": 9, "
                  "\"n_periods\": 8}}\n");
  REQUIRE(run_cli({"gen-data", "--out", "data_prec", "--config", cfg.string(),
                   "--set", "simulated.n_problems=7", "--seed", "11"}) == 0);
  const auto echoed =
      nlohmann::json::parse(slurp(out_path("data_prec/config_gen-data.json")));
  CHECK(echoed.at("simulated").at("n_problems").get<int>() == 7);
  CHECK(echoed.at("simulated").at("n_periods").get<int>() == 8);
  CHECK(echoed.at("seed").get<int>() == 11);
  CHECK(load_simulated_dataset(out_path("data_prec")).problems.size() == 7);
}

TEST_CASE("train with zero learning rate writes the untouched init") {
  tiny_dataset();
  REQUIRE(run_cli({"train", "--out", "train_zero", "--seed", "3",
                   "--set", "dataset=" + out_path("data_tiny").string(),
                   "--set", "n_val=4",
                   "--set", "train.alpha0=0.0",
                   "--set", "train.batch_size=4",
                   "--set", "train.validation_period=2"}) == 0);
  CHECK(std::filesystem::exists(out_path("train_zero/training_log.csv")));

  SimulatedDataset ds = load_simulated_dataset(out_path("data_tiny"));
  GruParams want = GruParams::init(16, 4, ds.config.penalty, Rng::derive(3, 1));
  want.norm = {ds.mean_volume, ds.mean_price};
  GruParams got = load_gru_model(out_path("train_zero/model.txt"));
  CHECK(got.flatten() == want.flatten());
  CHECK(got.norm.mean_volume == want.norm.mean_volume);
  CHECK(got.norm.mean_price == want.norm.mean_price);
  CHECK(got.bid_cap == want.bid_cap);
}

TEST_CASE("train demands an existing dataset") {
  CHECK(run_cli({"train", "--out", "train_missing"}) == 2);
  CHECK(run_cli({"train", "--out", "train_missing2", "--set",
                 "dataset=/no/such/dir"}) == 2);
}

TEST_CASE("tune-pi runs against a simulated dataset") {
  tiny_dataset();
  REQUIRE(run_cli({"tune-pi", "--out", "pi_tuned", "--seed", "4",
                   "--set", "dataset=" + out_path("data_tiny").string(),
                   "--set", "n_val=4",
                   "--set", "train.epochs=1",
                   "--set", "train.batch_size=4",
                   "--set", "train.validation_period=2"}) == 0);
  const std::string body = slurp(out_path("pi_tuned/model_pi.txt"));
  CHECK(body.rfind("bidlab-model v1\ntype pi\n", 0) == 0);
  PiParams p = load_pi_model(out_path("pi_tuned/model_pi.txt"));
  CHECK(std::isfinite(p.theta_p));
  CHECK(std::isfinite(p.theta_i));
}

TEST_CASE("solve dp writes a loadable field with boxed bids") {
  REQUIRE(run_cli({"solve", "dp", "--out", "dp_a",
                   "--set", "n_periods=4",
                   "--set", "g.n=9", "--set", "h.n=5",
                   "--set", "bid_levels=9"}) == 0);
  PolicyField f = PolicyField::load_csv(out_path("dp_a/field.csv"));
  CHECK(f.min_bid() >= 0.0);
  CHECK(f.max_bid() <= 2.0);
  CHECK(f.bid_at(0.0, -0.5, 0.0) == 0.0);  // no goal left: stop bidding

  REQUIRE(run_cli({"solve", "dp", "--out", "dp_b",
                   "--set", "n_periods=4",
                   "--set", "g.n=9", "--set", "h.n=5",
                   "--set", "bid_levels=9"}) == 0);
  CHECK(slurp(out_path("dp_a/field.csv")) == slurp(out_path("dp_b/field.csv")));
}

TEST_CASE("solve pde keeps the terminal bid ramp and respects strides") {
  REQUIRE(run_cli({"solve", "pde", "--out", "pde_a",
                   "--set", "horizon=0.05",
                   "--set", "n_slices=5",
                   "--set", "g.n=19", "--set", "h.n=7",
                   "--set", "stride.t=2"}) == 0);
  PolicyField f = PolicyField::load_csv(out_path("pde_a/field.csv"));
  // Final slice: bid K once any goal remains, 0 once it is met.
  CHECK(f.bid_at(0.05, 2.0, 10.0) == 2.0);
  CHECK(f.bid_at(0.05, -0.5, 10.0) == 0.0);
  CHECK(f.max_bid() <= 2.0);
  CHECK(f.min_bid() >= 0.0);
}

TEST_CASE("solve pde rejects an unstable explicit step") {
  CHECK(run_cli({"solve", "pde", "--out", "pde_cfl",
                 "--set", "dt=0.5",
                 "--set", "n_slices=2",
                 "--set", "g.n=21", "--set", "h.n=9"}) == 3);
}

TEST_CASE("run-episode rolls a saved model and checks its inputs") {
  tiny_dataset();
  REQUIRE(run_cli({"train", "--out", "ep_model", "--seed", "3",
                   "--set", "dataset=" + out_path("data_tiny").string(),
                   "--set", "n_val=4",
                   "--set", "train.alpha0=0.0",
                   "--set", "train.batch_size=4",
                   "--set", "train.validation_period=2"}) == 0);
  const std::string model = out_path("ep_model/model.txt").string();
  REQUIRE(run_cli({"run-episode", "--out", "ep_a",
                   "--set", "model=" + model,
                   "--set", "scenario.n_periods=8",
                   "--set", "goal=40"}) == 0);
  const std::string trace = slurp(out_path("ep_a/trace.csv"));
  CHECK(trace.find("summary,") != std::string::npos);

  CHECK(run_cli({"run-episode", "--out", "ep_b"}) == 2);  // no model
  CHECK(run_cli({"run-episode", "--out", "ep_c",
                 "--set", "model=" + model,
                 "--set", "mode=bogus"}) == 2);
  CHECK(run_cli({"run-episode", "--out", "ep_d",
                 "--set", "model=" + model,
                 "--set", "scenario.shocks=[{\"t0\":1}]"}) == 2);
}

TEST_CASE("experiment shock-grid emits the factorial report") {
  REQUIRE(run_cli({"experiment", "shock-grid", "--out", "sg_a", "--seed", "9",
                   "--set", "train_sigmas=[0.0]",
                   "--set", "shock_factors=[1.0,2.0]",
                   "--set", "shock_t0=4",
                   "--set", "base.n_problems=12",
                   "--set", "base.n_periods=8",
                   "--set", "base.goal=40",
                   "--set", "n_val_problems=4",
                   "--set", "train.epochs=1",
                   "--set", "train.batch_size=6",
                   "--set", "train.validation_period=2"}) == 0);
  CHECK(std::filesystem::exists(out_path("sg_a/report.csv")));
  CHECK(std::filesystem::exists(out_path("sg_a/model_sigma0.txt")));
  CHECK(std::filesystem::exists(out_path("sg_a/config_shock-grid.json")));
  const std::string report = slurp(out_path("sg_a/report.csv"));
  CHECK(report.find("sigma0_factor1") != std::string::npos);
  CHECK(report.find("sigma0_factor2") != std::string::npos);

  // The default preset is the full five-sigma by six-factor grid.
  ShockGridConfig defaults;
  CHECK(defaults.train_sigmas.size() == 5);
  CHECK(defaults.shock_factors.size() == 6);

  REQUIRE(run_cli({"report", "--set",
                   "dir=" + out_path("sg_a").string()}) == 0);
  CHECK(run_cli({"report", "--set", "dir=" + out_path("nowhere").string()}) ==
        2);
  CHECK(run_cli({"report"}) == 2);
}

TEST_CASE("experiment reruns are byte-identical") {
  std::vector<std::string> args = {"experiment", "noise-cross", "--seed", "2",
                                   "--set", "n_train_problems=12",
                                   "--set", "n_val_problems=4",
                                   "--set", "n_eval_episodes=6",
                                   "--set", "base.n_periods=8",
                                   "--set", "base.goal=40",
                                   "--set", "train.epochs=1",
                                   "--set", "train.batch_size=6",
                                   "--set", "train.validation_period=2"};
  auto a = args, b = args;
  a.insert(a.begin() + 2, {"--out", "nc_a"});
  b.insert(b.begin() + 2, {"--out", "nc_b"});
  REQUIRE(run_cli(a) == 0);
  REQUIRE(run_cli(b) == 0);
  CHECK(slurp(out_path("nc_a/report.csv")) == slurp(out_path("nc_b/report.csv")));
  CHECK(slurp(out_path("nc_a/cis.csv")) == slurp(out_path("nc_b/cis.csv")));
}

TEST_CASE("experiment pi-vs-rnn consumes a saved production dataset") {
  REQUIRE(run_cli({"gen-data", "--out", "prod_tiny", "--seed", "6",
                   "--set", "kind=production",
                   "--set", "production.n_placements=2",
                   "--set", "production.n_days=3",
                   "--set", "production.train_days=2",
                   "--set", "production.n_periods=8",
                   "--set", "production.n_train_problems=12",
                   "--set", "production.n_val_problems=4",
                   "--set", "production.eval_goals=[30.0]",
                   "--set", "production.eval_episodes_per_goal=4",
                   "--set", "production.goal_min=10",
                   "--set", "production.goal_max=60"}) == 0);
  REQUIRE(run_cli({"experiment", "pi-vs-rnn", "--out", "pvr_a", "--seed", "6",
                   "--set", "dataset=" + out_path("prod_tiny").string(),
                   "--set", "gru_train.epochs=1",
                   "--set", "gru_train.batch_size=6",
                   "--set", "gru_train.validation_period=2",
                   "--set", "pi_train.epochs=1",
                   "--set", "pi_train.batch_size=6",
                   "--set", "pi_train.validation_period=2"}) == 0);
  CHECK(std::filesystem::exists(out_path("pvr_a/report.csv")));
  CHECK(std::filesystem::exists(out_path("pvr_a/cis.csv")));
  CHECK(std::filesystem::exists(out_path("pvr_a/model_rnn.txt")));
  CHECK(std::filesystem::exists(out_path("pvr_a/model_pi.txt")));
  const std::string report = slurp(out_path("pvr_a/report.csv"));
  CHECK(report.find("pi_goal30") != std::string::npos);
  CHECK(report.find("rnn_goal30") != std::string::npos);

  // A simulated dataset is the wrong shape for this experiment.
  tiny_dataset();
  CHECK(run_cli({"experiment", "pi-vs-rnn", "--out", "pvr_bad",
                 "--set", "dataset=" + out_path("data_tiny").string()}) == 2);
}
