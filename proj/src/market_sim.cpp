#include "bidlab/market_sim.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab {

VolumeScenario VolumeScenario::constant(int n_periods, double level) {
  VolumeScenario s;
  s.n_periods = n_periods;
  s.base_curve.assign(n_periods, level);
  return s;
}

VolumeScenario VolumeScenario::from_curve(std::vector<double> curve) {
  VolumeScenario s;
  s.n_periods = static_cast<int>(curve.size());
  s.base_curve = std::move(curve);
  return s;
}

VolumeScenario& VolumeScenario::with_noise(double sd) {
  noise_sd = [sd](int) { return sd; };
  return *this;
}

VolumeScenario& VolumeScenario::with_shock(int t0, double factor) {
  shocks.push_back({t0, factor});
  return *this;
}

double step_volume(double intensity, double drift, double noise_sd,
                   double z) {
  return std::max(0.0, intensity + drift + noise_sd * z);
}

double shock_multiplier(int t, std::span<const VolumeShock> shocks) {
  double m = 1.0;
  for (const auto& s : shocks)
    if (t >= s.t0) m /= s.factor;
  return m;
}

std::vector<double> VolumeScenario::sample_path(Rng& rng) const {
  std::vector<double> path(n_periods);
  if (n_periods == 0) return path;
  double walk = base_curve.at(0);
  path[0] = walk * shock_multiplier(0, shocks);
  for (int t = 1; t < n_periods; ++t) {
    // The walk tracks the base curve's increments; noise accumulates on top.
    double d = base_curve[t] - base_curve[t - 1];
    if (drift) d += drift(t - 1);
    double sd = noise_sd ? noise_sd(t - 1) : 0.0;
    walk = step_volume(walk, d, sd, sd > 0.0 ? rng.normal() : 0.0);
    path[t] = walk * shock_multiplier(t, shocks);
  }
  return path;
}

std::vector<double> VolumeScenario::mean_path() const {
  std::vector<double> path(n_periods);
  for (int t = 0; t < n_periods; ++t)
    path[t] = base_curve[t] * shock_multiplier(t, shocks);
  return path;
}

double EpisodeTrace::total_volume() const {
  return std::accumulate(volumes.begin(), volumes.end(), 0.0);
}

double EpisodeTrace::total_spend() const {
  return std::accumulate(spends.begin(), spends.end(), 0.0);
}

double EpisodeTrace::penalty_paid() const {
  return penalty * std::max(0.0, goal - total_volume());
}

double final_cost(const EpisodeTrace& trace) { return trace.final_cost(); }

void EpisodeTrace::save_csv(const std::filesystem::path& p) const {
  std::string out = "t,bid,volume,spend,remaining_goal\n";
  double remaining = goal;
  for (std::size_t t = 0; t < bids.size(); ++t) {
    remaining -= volumes[t];
    out += std::to_string(t) + "," + fmt_double(bids[t]) + "," +
           fmt_double(volumes[t]) + "," + fmt_double(spends[t]) + "," +
           fmt_double(remaining) + "\n";
  }
  out += "summary," + fmt_double(final_cost()) + "," +
         fmt_double(penalty_paid()) + "," + fmt_double(total_volume()) + "," +
         fmt_double(total_spend()) + "\n";
  write_text_file(p, out);
}

namespace {

// One sampled auction: u locates the winning-bid bin via the smallest level
// whose win rate covers u; the auction is won iff the bid reaches that
// level, paying the bin's mean price.
void sample_auction(const BidLandscape& l, double bid, double u, double* vol,
                    double* spend) {
  const auto& win = l.win_rate();
  auto it = std::lower_bound(win.begin(), win.end(), u);
  if (it == win.end()) return;  // winning bid above the grid: unwinnable
  int k = static_cast<int>(it - win.begin());
  double mass = win[k] - (k > 0 ? win[k - 1] : 0.0);
  if (mass <= 0.0) return;
  if (bid < l.grid().edges[k]) return;
  *vol += 1.0;
  *spend += (l.spend_rate()[k] - (k > 0 ? l.spend_rate()[k - 1] : 0.0)) / mass;
}

}  // namespace

EpisodeTrace run_episode_on_path(Controller& c, std::span<const double> path,
                                 const LandscapeProcess& landscapes,
                                 double goal, double penalty,
                                 FeedbackMode mode, Rng* rng) {
  if (mode == FeedbackMode::sampled && rng == nullptr)
    throw std::logic_error("sampled feedback requires an rng");
  int n = static_cast<int>(path.size());
  EpisodeTrace trace;
  trace.goal = goal;
  trace.penalty = penalty;
  trace.bids.resize(n);
  trace.volumes.resize(n);
  trace.spends.resize(n);
  trace.intensities.assign(path.begin(), path.end());
  c.reset({n, goal, penalty});

  double remaining = goal;
  double last_vol = 0.0, last_spend = 0.0;
  for (int t = 0; t < n; ++t) {
    Observation obs{n - t, remaining, last_vol, last_spend};
    double bid = c.act(obs, t);
    if (std::isnan(bid) || bid < 0.0)
      throw std::runtime_error("controller emitted invalid bid " +
                               std::to_string(bid) + " at period " +
                               std::to_string(t));
    const BidLandscape& l = landscapes.at(t);
    double vol = 0.0, spend = 0.0;
    if (mode == FeedbackMode::expected) {
      vol = expected_volume(l, path[t], bid);
      spend = expected_spend(l, path[t], bid);
    } else {
      long m = rng->poisson(path[t]);
      for (long i = 0; i < m; ++i)
        sample_auction(l, bid, rng->uniform(), &vol, &spend);
    }
    trace.bids[t] = bid;
    trace.volumes[t] = vol;
    trace.spends[t] = spend;
    remaining -= vol;
    last_vol = vol;
    last_spend = spend;
  }
  return trace;
}

EpisodeTrace run_episode(Controller& c, const VolumeScenario& scenario,
                         const LandscapeProcess& landscapes, double goal,
                         double penalty, FeedbackMode mode,
                         std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> path = scenario.sample_path(rng);
  return run_episode_on_path(c, path, landscapes, goal, penalty, mode, &rng);
}

}  // namespace bidlab
