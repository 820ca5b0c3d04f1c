#include <cmath>
#include <filesystem>
#include <memory>
#include <stdexcept>
#include <vector>

#include <doctest.h>

#include "bidlab/bench.hpp"
#include "bidlab/rng.hpp"
#include "bidlab/training.hpp"
#include "bidlab/util.hpp"

using namespace bidlab;

namespace {

std::filesystem::path temp_file(const char* name) {
  auto dir = std::filesystem::temp_directory_path() / "bidlab_train_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::shared_ptr<const LandscapeProcess> shared_market() {
  static std::shared_ptr<const LandscapeProcess> proc = [] {
    BidLandscape raw = lognormal_landscape(default_price_grid(), 1.0, 0.5);
    return std::make_shared<LandscapeProcess>(
        smooth_process(LandscapeProcess(raw), BidNoise::gamma_k(4.0)));
  }();
  return proc;
}

BiddingProblem toy_problem(std::int64_t id, int n_periods, double goal,
                           double level = 10.0) {
  BiddingProblem prob;
  prob.id = id;
  prob.landscapes = shared_market();
  prob.intensity_path.assign(n_periods, level);
  prob.goal = goal;
  prob.penalty = 2.0;
  return prob;
}

std::vector<BiddingProblem> toy_set(int n, int n_periods, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<BiddingProblem> out;
  for (int i = 0; i < n; ++i) {
    BiddingProblem p = toy_problem(i, n_periods, 0.0);
    for (double& v : p.intensity_path) v = rng.uniform(6.0, 14.0);
    double cap = 0.0;
    for (double v : p.intensity_path) cap += v;
    p.goal = rng.uniform(0.3, 0.7) * cap;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace

TEST_CASE("learning rate follows the inverse-time schedule") {
  TrainConfig cfg;
  CHECK(learning_rate(0, cfg) == 0.1);
  CHECK(learning_rate(399, cfg) == 0.1);
  CHECK(learning_rate(400, cfg) == doctest::Approx(0.1 / 1.5).epsilon(1e-15));
  CHECK(learning_rate(799, cfg) == doctest::Approx(0.1 / 1.5).epsilon(1e-15));
  CHECK(learning_rate(800, cfg) == 0.05);
}

TEST_CASE("gradient clipping preserves direction") {
  std::vector<double> small = {3.0, 4.0};
  ClipResult r1 = clip_gradient(small, 5.0);
  CHECK(r1.norm == 5.0);
  CHECK_FALSE(r1.clipped);
  CHECK(small == std::vector<double>{3.0, 4.0});  // untouched at the bound

  std::vector<double> big = {30.0, 40.0};
  ClipResult r2 = clip_gradient(big, 5.0);
  CHECK(r2.norm == 50.0);
  CHECK(r2.clipped);
  CHECK(std::hypot(big[0], big[1]) == doctest::Approx(5.0).epsilon(1e-14));
  CHECK(big[1] / big[0] == doctest::Approx(4.0 / 3.0).epsilon(1e-14));

  std::vector<double> zero = {0.0, 0.0};
  ClipResult r3 = clip_gradient(zero, 5.0);
  CHECK(r3.norm == 0.0);
  CHECK_FALSE(r3.clipped);
}

TEST_CASE("episode loss agrees between plain and taped evaluation") {
  BiddingProblem prob = toy_problem(1, 8, 40.0);
  GruParams params = GruParams::init(16, 4, prob.penalty, 3);
  params.norm = {10.0, 1.0};

  const double plain = gru_episode_loss(params, prob);
  const auto [taped, margin] = gru_episode_loss_tape(params, prob);
  const EpisodeGradient eg = gru_episode_loss_grad(params, prob);
  CHECK(plain == doctest::Approx(taped).epsilon(1e-12));
  CHECK(plain == doctest::Approx(eg.loss).epsilon(1e-12));
  CHECK(eg.grad.size() == params.n_params());
  CHECK(std::isfinite(margin));
  CHECK(plain > 0.0);
}

TEST_CASE("episode loss requires materialized curves") {
  BiddingProblem prob = toy_problem(1, 4, 10.0);
  prob.landscapes = std::make_shared<LandscapeProcess>(
      LandscapeProcess(lognormal_landscape(default_price_grid(), 1.0, 0.5)));
  GruParams params = GruParams::init(8, 4, prob.penalty, 3);
  CHECK_THROWS_AS(gru_episode_loss(params, prob), std::logic_error);
}

TEST_CASE("recurrent gradient matches central differences") {
  const auto problems = toy_set(3, 8, 41);
  for (const auto& prob : problems) {
    GruParams params = GruParams::init(16, 4, prob.penalty, 13);
    params.norm = {10.0, 1.0};
    std::vector<double> flat = params.flatten();
    const EpisodeGradient analytic = gru_episode_loss_grad(params, prob);

    GruParams work = params;
    // Saturated gates leave some recurrent weights with gradients near
    // 1e-8 while the loss sits near 50; central differences cannot resolve
    // those below ulp(loss)/(2*eps), so coordinates under the floor are
    // held to an absolute tolerance instead.
    const auto res = ad::grad_check(
        [&](std::span<const double> p) {
          work.unflatten(p);
          return gru_episode_loss_tape(work, prob);
        },
        flat, analytic.grad, 1e-4, 1e-4);
    CHECK(res.max_rel_error < 1e-5);
    CHECK(res.n_checked > 900);
  }
}

TEST_CASE("pacing gradient matches central differences") {
  BiddingProblem prob = toy_problem(5, 6, 30.0);
  PiParams params;
  params.theta_p = 0.03;
  params.theta_i = 0.008;

  const EpisodeGradient analytic =
      pi_episode_loss_grad(params, prob.penalty, prob);
  REQUIRE(analytic.grad.size() == 2);
  CHECK(analytic.loss ==
        doctest::Approx(pi_episode_loss(params, prob.penalty, prob))
            .epsilon(1e-12));

  const double eps = 1e-6;
  for (int i = 0; i < 2; ++i) {
    PiParams up = params, dn = params;
    (i == 0 ? up.theta_p : up.theta_i) += eps;
    (i == 0 ? dn.theta_p : dn.theta_i) -= eps;
    const double fd = (pi_episode_loss(up, prob.penalty, prob) -
                       pi_episode_loss(dn, prob.penalty, prob)) /
                      (2 * eps);
    const double rel =
        std::abs(fd - analytic.grad[i]) /
        std::max({std::abs(fd), std::abs(analytic.grad[i]), 1e-8});
    CHECK(rel < 1e-5);
  }
}

TEST_CASE("training is deterministic and thread-count independent") {
  const auto problems = toy_set(8, 6, 51);
  const auto validation = toy_set(4, 6, 52);
  GruParams init = GruParams::init(16, 4, 2.0, 7);
  init.norm = {10.0, 1.0};

  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 2;
  cfg.alpha0 = 0.05;
  cfg.validation_period = 1;
  cfg.seed = 9;

  TrainResult a = train_gru(init, problems, validation, cfg);
  TrainResult b = train_gru(init, problems, validation, cfg);
  CHECK(a.params.flatten() == b.params.flatten());
  CHECK(a.best_val_loss == b.best_val_loss);
  CHECK(a.steps == 4);  // 8 problems / batch 4 * 2 epochs
  CHECK(a.log.size() == 4);

  TrainConfig threaded = cfg;
  threaded.threads = 3;
  TrainResult c = train_gru(init, problems, validation, threaded);
  CHECK(c.params.flatten() == a.params.flatten());
  CHECK(c.final_val_loss == a.final_val_loss);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(c.log[i].batch_loss == a.log[i].batch_loss);
    CHECK(c.log[i].grad_norm == a.log[i].grad_norm);
  }
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto problems = toy_set(4, 5, 61);
  const auto validation = toy_set(2, 5, 62);
  GruParams init = GruParams::init(8, 4, 2.0, 7);
  init.norm = {10.0, 1.0};

  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.alpha0 = 0.0;
  cfg.validation_period = 1;
  TrainResult r = train_gru(init, problems, validation, cfg);
  CHECK(r.params.flatten() == init.flatten());
  CHECK(r.best_val_loss == r.final_val_loss);
  CHECK_FALSE(r.diverged);
}

TEST_CASE("a few steps of training improve the validation loss") {
  const auto problems = toy_set(24, 6, 71);
  const auto validation = toy_set(8, 6, 72);
  GruParams init = GruParams::init(16, 4, 2.0, 7);
  init.norm = {10.0, 1.0};

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 12;
  cfg.alpha0 = 0.05;
  cfg.validation_period = 3;
  cfg.seed = 5;

  const double before = mean_validation_loss_gru(init, validation);
  TrainResult r = train_gru(init, problems, validation, cfg);
  CHECK_FALSE(r.diverged);
  CHECK(r.best_val_loss <= r.final_val_loss + 1e-12);
  CHECK(r.best_val_loss < before);
  CHECK(mean_validation_loss_gru(r.params, validation) ==
        doctest::Approx(r.best_val_loss).epsilon(1e-12));
}

TEST_CASE("runaway steps abort through the divergence guard") {
  // A tiny goal reachable with cheap bids keeps the initial validation loss
  // near the spend of a quiet policy, while a steep penalty makes both
  // saturated extremes (silent and max-bid) cost an order of magnitude
  // more. An absurd learning rate with the clip disabled flings the
  // parameters to one of those extremes, where saturation freezes them.
  std::vector<BiddingProblem> train, val;
  for (int i = 0; i < 8; ++i) {
    BiddingProblem p = toy_problem(400 + i, 6, 2.0);
    p.penalty = 30.0;
    (i < 6 ? train : val).push_back(std::move(p));
  }
  GruParams init = GruParams::init(16, 4, 30.0, 7);
  init.norm = {10.0, 1.0};
  // Bid near 0.4: fills the goal several times over for well under a
  // currency unit, with the candidate gate still responsive. The update
  // gate is held open so the bid tracks the candidate from the first step.
  for (double& b : init.bc) b = -2.1;
  for (double& b : init.bz) b = -3.0;
  const double before = mean_validation_loss_gru(init, val);
  CHECK(before < 5.5);  // 10x guard stays below the ~60 extreme losses

  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.epochs = 50;
  cfg.alpha0 = 1e7;
  cfg.clip_threshold = 1e9;  // disable the clip so the blowup is visible
  cfg.validation_period = 1;

  TrainResult r = train_gru(init, train, val, cfg);
  CHECK(r.diverged);
  CHECK(r.steps < 100);
  CHECK(static_cast<int>(r.log.size()) == r.steps);
  for (double v : r.params.flatten()) CHECK(std::isfinite(v));
  CHECK(r.best_val_loss <= before + 1e-12);
}

TEST_CASE("pi tuning does not regress the starting gains") {
  const auto problems = toy_set(16, 6, 91);
  const auto validation = toy_set(6, 6, 92);
  PiParams init = default_pi_params(10.0, 1.0);

  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.epochs = 6;
  cfg.alpha0 = 0.01;
  cfg.clip_threshold = 1.0;
  cfg.validation_period = 2;

  const double before = mean_validation_loss_pi(init, 2.0, validation);
  PiTrainResult r = tune_pi(init, 2.0, problems, validation, cfg);
  CHECK_FALSE(r.diverged);
  CHECK(r.best_val_loss <= before + 1e-12);
  CHECK(r.params.reference.c0 == init.reference.c0);  // curve stays fixed
  CHECK(mean_validation_loss_pi(r.params, 2.0, validation) ==
        doctest::Approx(r.best_val_loss).epsilon(1e-12));
}

TEST_CASE("empty problem sets are rejected") {
  const auto problems = toy_set(2, 4, 95);
  GruParams init = GruParams::init(8, 4, 2.0, 7);
  TrainConfig cfg;
  CHECK_THROWS_AS(train_gru(init, {}, problems, cfg), std::invalid_argument);
  CHECK_THROWS_AS(train_gru(init, problems, {}, cfg), std::invalid_argument);
}

TEST_CASE("training log format") {
  std::vector<TrainLogRow> rows(2);
  rows[0] = {0, 0.5, 1.5, 2.0, false, false, 0.0};
  rows[1] = {1, 0.25, 1.25, 6.0, true, true, 0.75};
  const auto path = temp_file("log.csv");
  save_training_log(path, rows);
  CHECK(read_text_file(path) ==
        "step,lr,batch_loss,grad_norm,clipped,val_loss\n"
        "0,0.5,1.5,2,0,\n"
        "1,0.25,1.25,6,1,0.75\n");
}
