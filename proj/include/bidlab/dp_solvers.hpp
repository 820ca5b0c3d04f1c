#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "bidlab/landscape.hpp"
#include "bidlab/market_sim.hpp"

namespace bidlab {

// Per-impression auction response: win probability and expected payment as
// functions of the bid.
struct MarketResponse {
  std::function<double(double)> win_rate;
  std::function<double(double)> spend_rate;
};

// Step-function response of a discretized landscape.
MarketResponse response_of(const BidLandscape& l);

// Winning bid ~ Normal(mean, sd); win_rate is the CDF and spend_rate the
// partial expectation over [0, bid]. Toy market for the PDE solver.
MarketResponse gaussian_market(double mean, double sd);
double gaussian_market_quantile(double mean, double sd, double q);

// Solver output: bid (and cost-to-go) on a (t, G, H) lattice. Lookup is
// trilinear; queries outside the hull clamp to it and are counted.
class PolicyField {
 public:
  PolicyField() = default;
  PolicyField(std::vector<double> t_grid, std::vector<double> g_grid,
              std::vector<double> h_grid, double penalty);

  const std::vector<double>& t_grid() const { return t_; }
  const std::vector<double>& g_grid() const { return g_; }
  const std::vector<double>& h_grid() const { return h_; }
  double penalty() const { return penalty_; }

  double& bid(int ti, int gi, int hi) { return bid_[idx(ti, gi, hi)]; }
  double& cost(int ti, int gi, int hi) { return cost_[idx(ti, gi, hi)]; }
  double bid(int ti, int gi, int hi) const { return bid_[idx(ti, gi, hi)]; }
  double cost(int ti, int gi, int hi) const { return cost_[idx(ti, gi, hi)]; }

  double bid_at(double t, double g, double h) const;
  double cost_at(double t, double g, double h) const;

  // Number of lookups so far that fell outside the grid hull.
  long hull_clamps() const { return clamps_; }

  double max_bid() const;
  double min_bid() const;

  void save_csv(const std::filesystem::path& p, int stride_t = 1,
                int stride_g = 1, int stride_h = 1) const;
  static PolicyField load_csv(const std::filesystem::path& p);

 private:
  std::size_t idx(int ti, int gi, int hi) const {
    return (static_cast<std::size_t>(ti) * g_.size() + gi) * h_.size() + hi;
  }
  double interp(const std::vector<double>& table, double t, double g,
                double h) const;

  std::vector<double> t_, g_, h_;
  std::vector<double> bid_, cost_;
  double penalty_ = 0.0;
  mutable long clamps_ = 0;
};

// Distribution of the next period's intensity given the current one.
class TransitionKernel {
 public:
  virtual ~TransitionKernel() = default;
  // Appends (next intensity, weight) pairs; weights sum to 1.
  virtual void nodes(int t, double h,
                     std::vector<std::pair<double, double>>* out) const = 0;
};

// H' = max(0, H + drift).
class DeterministicKernel final : public TransitionKernel {
 public:
  explicit DeterministicKernel(double drift = 0.0) : drift_(drift) {}
  void nodes(int t, double h,
             std::vector<std::pair<double, double>>* out) const override;

 private:
  double drift_;
};

// Next intensity follows a known curve regardless of the current one.
class PathKernel final : public TransitionKernel {
 public:
  explicit PathKernel(std::vector<double> path) : path_(std::move(path)) {}
  void nodes(int t, double h,
             std::vector<std::pair<double, double>>* out) const override;

 private:
  std::vector<double> path_;
};

// H' = max(0, H + drift + sigma * Z), expectation by 7-node Gauss-Hermite
// quadrature.
class GaussHermiteKernel final : public TransitionKernel {
 public:
  GaussHermiteKernel(double drift, double sigma)
      : drift_(drift), sigma_(sigma) {}
  void nodes(int t, double h,
             std::vector<std::pair<double, double>>* out) const override;

 private:
  double drift_;
  double sigma_;
};

// Backward induction over the (G, H) lattice:
//   C_t(G, H) = min_a [ H s(a) dt + E_H' C_{t+1}(G - H F(a) dt, H') ],
//   C_T(G, H) = penalty * max(0, G).
// Bids are searched over bid_grid restricted to [0, penalty] with 0 always
// included (a higher bid is never optimal; bidding 0 is always feasible).
// Ties pick the lowest bid. t_grid of the result is 0..n_periods in units
// of dt.
PolicyField solve_bellman(int n_periods, std::span<const double> g_grid,
                          std::span<const double> h_grid,
                          const MarketResponse& market,
                          const TransitionKernel& kernel, double penalty,
                          std::span<const double> bid_grid, double dt = 1.0);

PolicyField solve_bellman(int n_periods, std::span<const double> g_grid,
                          std::span<const double> h_grid,
                          const BidLandscape& landscape,
                          const TransitionKernel& kernel, double penalty,
                          std::span<const double> bid_grid, double dt = 1.0);

// Exhaustive minimum over all bid sequences on a deterministic intensity
// path. Reference implementation for small instances; the search space
// |bid_grid|^T is capped at 10^7.
double brute_force_cost(std::span<const double> intensity_path,
                        const MarketResponse& market, double goal,
                        double penalty, std::span<const double> bid_grid,
                        double dt = 1.0);

struct CflError : std::runtime_error {
  CflError(const std::string& msg, double suggested)
      : std::runtime_error(msg), suggested_dt(suggested) {}
  double suggested_dt;
};

struct PdeConfig {
  double horizon = 1.0;  // day length in time units
  double sigma = 0.0;    // intensity volatility per sqrt(time)
  double drift = 0.0;    // intensity drift per time
  double penalty = 2.0;
  int n_slices = 200;    // stored time slices including both ends
  double dt = 0.0;       // internal step; 0 = largest stable step
  double cfl_safety = 0.9;
};

// Explicit finite-difference solve of the bid field in backward time:
// upwind first difference in G (transport speed H F(a) >= 0), centered
// second difference in H with zero-gradient ends, Dirichlet bid = 0 at
// G_min (< 0 required) and bid = penalty at G_max. The terminal bid ramps
// from 0 to the penalty across one G cell around the goal boundary. The
// cost table is advanced alongside with spend source H spend_rate(a).
// Throws CflError when config.dt exceeds the stability limit.
PolicyField solve_pde(const PdeConfig& config, std::span<const double> g_grid,
                      std::span<const double> h_grid,
                      const MarketResponse& market);

// Follows the field on a realized intensity path with expected feedback;
// dt is the period length in field time units.
EpisodeTrace rollout_policy(const PolicyField& field,
                            std::span<const double> intensity_path,
                            const MarketResponse& market, double goal,
                            double dt);

std::vector<double> linspace(double lo, double hi, int n);

}  // namespace bidlab
