#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <vector>

#include "bidlab/autodiff.hpp"
#include "bidlab/controllers.hpp"
#include "bidlab/landscape.hpp"

namespace bidlab {

// One training/evaluation instance: a realized intensity path against a
// per-period (smoothed) response process.
struct BiddingProblem {
  std::int64_t id = 0;
  std::shared_ptr<const LandscapeProcess> landscapes;
  std::vector<double> intensity_path;
  double goal = 0.0;
  double penalty = 0.0;

  int n_periods() const { return static_cast<int>(intensity_path.size()); }
};

struct TrainConfig {
  int batch_size = 100;
  int epochs = 1;
  double alpha0 = 0.1;       // initial learning rate
  double decay_eta = 0.5;    // decay strength
  int decay_steps = 400;     // steps per decay increment
  double clip_threshold = 5.0;
  int validation_period = 200;  // batches between validation passes
  std::uint64_t seed = 1;
  int threads = 1;
};

// alpha0 / (1 + eta * floor(step / decay_steps)).
double learning_rate(int step, const TrainConfig& cfg);

// Scales grad down to the threshold when its l2 norm exceeds it.
struct ClipResult {
  double norm = 0.0;
  bool clipped = false;
};
ClipResult clip_gradient(std::span<double> grad, double threshold);

struct EpisodeGradient {
  double loss = 0.0;
  std::vector<double> grad;
};

// Episode loss: total spend plus penalty * max(0, remaining goal), with the
// response read through the piecewise-linear curves of the problem's
// landscape process (which must have materialized curves). The gradient is
// reverse-mode through the whole unrolled episode.
double gru_episode_loss(const GruParams& params, const BiddingProblem& prob);
EpisodeGradient gru_episode_loss_grad(const GruParams& params,
                                      const BiddingProblem& prob);
// Same quantities evaluated on a tape. The second value is the signed
// distance to the nearest nonsmooth point of the loss: the penalty kink
// (final remaining goal) or the closest response-curve knot touched by any
// bid, whichever is nearer. Exposed for gradient checking.
std::pair<double, double> gru_episode_loss_tape(const GruParams& params,
                                                const BiddingProblem& prob);

double pi_episode_loss(const PiParams& params, double bid_cap,
                       const BiddingProblem& prob);
EpisodeGradient pi_episode_loss_grad(const PiParams& params, double bid_cap,
                                     const BiddingProblem& prob);

struct TrainLogRow {
  int step = 0;
  double lr = 0.0;
  double batch_loss = 0.0;
  double grad_norm = 0.0;
  bool clipped = false;
  bool has_val = false;
  double val_loss = 0.0;
};

void save_training_log(const std::filesystem::path& p,
                       std::span<const TrainLogRow> rows);

struct TrainResult {
  GruParams params;        // best validation checkpoint
  GruParams final_params;  // last iterate, useful when the schedule anneals
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  int steps = 0;
};

// Minibatch SGD with the inverse-time schedule, global-norm clipping and
// validation-based model selection. Problems are consumed in shuffled
// batches, reshuffled each epoch; per-problem gradients are reduced in
// problem order so the result does not depend on thread count.
TrainResult train_gru(const GruParams& init,
                      std::span<const BiddingProblem> problems,
                      std::span<const BiddingProblem> validation,
                      const TrainConfig& cfg);

struct PiTrainResult {
  PiParams params;        // best validation checkpoint
  PiParams final_params;  // last iterate
  double best_val_loss = 0.0;
  double final_val_loss = 0.0;
  std::vector<TrainLogRow> log;
  bool diverged = false;
};

// Tunes (theta_p, theta_i) by the same SGD loop; the reference curve stays
// fixed. bid_cap bounds the clamped readout (the episode penalty).
PiTrainResult tune_pi(const PiParams& init, double bid_cap,
                      std::span<const BiddingProblem> problems,
                      std::span<const BiddingProblem> validation,
                      const TrainConfig& cfg);

double mean_validation_loss_gru(const GruParams& params,
                                std::span<const BiddingProblem> validation);
double mean_validation_loss_pi(const PiParams& params, double bid_cap,
                               std::span<const BiddingProblem> validation);

}  // namespace bidlab
