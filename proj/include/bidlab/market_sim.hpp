#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

#include "bidlab/landscape.hpp"

namespace bidlab {

class Rng;

// What the controller sees at the start of period t: remaining periods,
// remaining goal, and the previous period's delivery. First period feedback
// is zero.
struct Observation {
  int periods_left = 0;
  double remaining_goal = 0.0;
  double last_volume = 0.0;
  double last_spend = 0.0;
};

// Multiplicative drop (or surge) in realized volume from period t0 on.
// factor > 1 means the market delivers 1/factor of the expected intensity.
struct VolumeShock {
  int t0 = 0;
  double factor = 1.0;
};

// Per-period impression intensity process. The base curve fixes the mean
// level; drift/noise define a random walk around it:
//   H_{t+1} = max(0, H_t + drift(t) + noise_sd(t) * xi),  xi ~ N(0,1).
// Shocks then divide the realized intensity from their onset period.
struct VolumeScenario {
  int n_periods = 0;
  std::vector<double> base_curve;
  std::function<double(int)> drift;     // absolute change per period
  std::function<double(int)> noise_sd;  // per-period standard deviation
  std::vector<VolumeShock> shocks;

  static VolumeScenario constant(int n_periods, double level);
  static VolumeScenario from_curve(std::vector<double> curve);

  VolumeScenario& with_noise(double sd);
  VolumeScenario& with_shock(int t0, double factor);

  // Realized intensity path: walk from base_curve[0], then shocks applied.
  std::vector<double> sample_path(Rng& rng) const;
  // Deterministic path: base curve with shocks applied, noise ignored.
  std::vector<double> mean_path() const;
};

// One Euler step of the intensity walk, clipped at zero.
double step_volume(double intensity, double drift, double noise_sd, double z);

// Combined multiplier of all shocks active at period t.
double shock_multiplier(int t, std::span<const VolumeShock> shocks);

struct EpisodeTrace {
  double goal = 0.0;
  double penalty = 0.0;
  std::vector<double> bids;
  std::vector<double> volumes;
  std::vector<double> spends;
  std::vector<double> intensities;

  double total_volume() const;
  double total_spend() const;
  double remaining_goal() const { return goal - total_volume(); }
  double penalty_paid() const;
  double final_cost() const { return total_spend() + penalty_paid(); }

  void save_csv(const std::filesystem::path& p) const;
};

double final_cost(const EpisodeTrace& trace);

struct EpisodeContext {
  int n_periods = 0;
  double goal = 0.0;
  double penalty = 0.0;
};

class Controller {
 public:
  virtual ~Controller() = default;
  virtual void reset(const EpisodeContext& ctx) = 0;
  virtual double act(const Observation& obs, int t) = 0;
};

// expected: each period delivers intensity * win_rate and intensity *
// spend_rate exactly. sampled: a Poisson number of impressions is drawn and
// each auction is won or lost individually.
enum class FeedbackMode { expected, sampled };

// Runs one episode on a pre-realized intensity path. rng is only used in
// sampled mode. Throws if the controller emits a NaN or negative bid.
EpisodeTrace run_episode_on_path(Controller& c, std::span<const double> path,
                                 const LandscapeProcess& landscapes,
                                 double goal, double penalty,
                                 FeedbackMode mode, Rng* rng = nullptr);

// Samples the scenario path from the seed, then runs the episode. With a
// noise-free scenario and expected feedback the result is deterministic.
EpisodeTrace run_episode(Controller& c, const VolumeScenario& scenario,
                         const LandscapeProcess& landscapes, double goal,
                         double penalty, FeedbackMode mode,
                         std::uint64_t seed);

}  // namespace bidlab
