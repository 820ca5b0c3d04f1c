#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "bidlab/market_sim.hpp"

namespace bidlab {

// Always bids the same level. Baseline and test fixture.
class FixedBidController : public Controller {
 public:
  explicit FixedBidController(double bid) : bid_(bid) {}
  void reset(const EpisodeContext&) override {}
  double act(const Observation&, int) override { return bid_; }

 private:
  double bid_;
};

// Nonnegative two-harmonic daily shape:
//   w_t = max(0, c0 + c1 cos(2*pi*t/T + phi1) + c2 cos(4*pi*t/T + phi2)).
struct HarmonicCurve {
  double c0 = 1.0;
  double c1 = 0.0;
  double phi1 = 0.0;
  double c2 = 0.0;
  double phi2 = 0.0;

  double weight(int t, int n_periods) const;
};

// Per-period delivery target: the remaining goal spread over the remaining
// periods in proportion to the curve weights. An all-zero tail falls back to
// a uniform split.
double reference_volume(int t, int n_periods, double remaining_goal,
                        const HarmonicCurve& curve);

// Least-squares fit of the two-harmonic shape to the mean of the given
// per-period volume curves (each normalized to mean 1 first).
HarmonicCurve fit_reference_curve(std::span<const std::vector<double>> curves);

struct PiParams {
  double theta_p = 0.0;
  double theta_i = 0.0;
  HarmonicCurve reference;
};

struct PiState {
  double last_error = 0.0;
  double integral = 0.0;
  double last_control = 0.0;
};

// One PI step against the pacing reference. The integrator only commits when
// the raw control lands inside [0, bid_cap]; otherwise the bid is clamped
// and the integral keeps its previous value (conditional integration).
struct PiStep {
  double bid = 0.0;
  PiState state;
};
PiStep pi_act(const PiState& state, const Observation& obs,
              const PiParams& params, int t, int n_periods, double bid_cap);

// Gain scale that puts initial bids near the mean price for typical errors.
// pace is the mean delivery per period needed to hit the goal.
PiParams default_pi_params(double pace, double mean_price);

class PiController : public Controller {
 public:
  explicit PiController(PiParams params) : params_(std::move(params)) {}
  void reset(const EpisodeContext& ctx) override;
  double act(const Observation& obs, int t) override;
  const PiState& state() const { return state_; }

 private:
  PiParams params_;
  PiState state_;
  EpisodeContext ctx_;
};

// Input scaling for the recurrent controller; stored with the model so
// evaluation matches training.
struct GruNormalizers {
  double mean_volume = 1.0;
  double mean_price = 1.0;
};

// Gated recurrent unit whose first state component is the bid. The first
// candidate component uses cap * (tanh + 1) / 2, so the carried state (and
// hence every emitted bid) stays inside [0, cap] by convex combination.
struct GruParams {
  int state_dim = 16;
  int input_dim = 4;
  double bid_cap = 0.0;
  GruNormalizers norm;
  std::vector<double> wz, uz, bz;  // update gate
  std::vector<double> wr, ur, br;  // reset gate
  std::vector<double> wc, uc, bc;  // candidate

  static GruParams init(int state_dim, int input_dim, double bid_cap,
                        std::uint64_t seed);

  std::size_t n_params() const;
  std::vector<double> flatten() const;
  void unflatten(std::span<const double> flat);
};

struct GruStep {
  double bid = 0.0;
  std::vector<double> state;
};
GruStep gru_act(std::span<const double> state, std::span<const double> input,
                const GruParams& params);

// Episode state init: the gated state is a running blend of candidates, and
// like any running average it is seeded with its first sample. The first
// observation's candidate becomes the state outright, so episodes do not
// open with a mechanical ramp away from an arbitrary rest value.
GruStep gru_warm_start(std::span<const double> input, const GruParams& params);

// [periods left / T, remaining goal / initial goal, volume / mean volume,
// spend / (mean volume * mean price)].
std::vector<double> normalize_observation(const Observation& obs,
                                          int n_periods, double initial_goal,
                                          const GruNormalizers& norm);

class GruController : public Controller {
 public:
  explicit GruController(GruParams params) : params_(std::move(params)) {}
  void reset(const EpisodeContext& ctx) override;
  double act(const Observation& obs, int t) override;
  const std::vector<double>& state() const { return state_; }

 private:
  GruParams params_;
  std::vector<double> state_;
  EpisodeContext ctx_;
};

enum class ModelType { pi, gru };

ModelType peek_model_type(const std::filesystem::path& p);
void save_pi_model(const std::filesystem::path& p, const PiParams& params);
PiParams load_pi_model(const std::filesystem::path& p);
void save_gru_model(const std::filesystem::path& p, const GruParams& params);
GruParams load_gru_model(const std::filesystem::path& p);
std::unique_ptr<Controller> load_controller(const std::filesystem::path& p);

}  // namespace bidlab
