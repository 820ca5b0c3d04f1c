#include "bidlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <stdexcept>
#include <thread>

#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab {

double learning_rate(int step, const TrainConfig& cfg) {
  return cfg.alpha0 / (1.0 + cfg.decay_eta * (step / cfg.decay_steps));
}

ClipResult clip_gradient(std::span<double> grad, double threshold) {
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  ClipResult r;
  r.norm = std::sqrt(sq);
  if (r.norm > threshold && r.norm > 0.0) {
    double scale = threshold / r.norm;
    for (double& g : grad) g *= scale;
    r.clipped = true;
  }
  return r;
}

namespace {

const ResponseCurves* curves_or_throw(const BiddingProblem& prob, int t) {
  const ResponseCurves* rc = prob.landscapes->curves(t);
  if (!rc)
    throw std::logic_error(
        "bidding problem needs materialized response curves");
  return rc;
}

// Market interaction shared by both controller tapes: volume and spend for
// the period, goal and spend accumulation.
struct EpisodeTapeState {
  ad::Tape tape;
  std::vector<ad::MonotoneCurve> curves;  // reserved up-front; pointers are stable
  ad::NodeId g_cur = -1;
  ad::NodeId spend_acc = -1;
  ad::NodeId v_prev = -1;
  ad::NodeId s_prev = -1;
  // Signed distance from the episode's bids to the closest response-curve
  // knot; tracks the most fragile period for finite-difference checks.
  double knot_margin = std::numeric_limits<double>::infinity();

  void start(const BiddingProblem& prob) {
    tape.clear();
    curves.clear();
    curves.reserve(2 * prob.n_periods());
    knot_margin = std::numeric_limits<double>::infinity();
  }

  void init_episode(double goal) {
    g_cur = tape.constant(goal);
    spend_acc = tape.constant(0.0);
    v_prev = tape.constant(0.0);
    s_prev = tape.constant(0.0);
  }

  void apply_market(const BiddingProblem& prob, int t, ad::NodeId bid) {
    const ResponseCurves* rc = curves_or_throw(prob, t);
    const double b = tape.scalar(bid);
    auto it = std::lower_bound(rc->x.begin(), rc->x.end(), b);
    double d = std::numeric_limits<double>::infinity();
    if (it != rc->x.end()) d = b - *it;
    if (it != rc->x.begin() && std::abs(b - *(it - 1)) < std::abs(d))
      d = b - *(it - 1);
    if (std::abs(d) < std::abs(knot_margin)) knot_margin = d;
    curves.push_back({rc->x, rc->win});
    ad::NodeId win = tape.curve(bid, &curves.back());
    curves.push_back({rc->x, rc->spend});
    ad::NodeId spend = tape.curve(bid, &curves.back());
    ad::NodeId intensity = tape.constant(prob.intensity_path[t]);
    ad::NodeId vt = tape.mul(win, intensity);
    ad::NodeId st = tape.mul(spend, intensity);
    spend_acc = tape.add(spend_acc, st);
    g_cur = tape.sub(g_cur, vt);
    v_prev = vt;
    s_prev = st;
  }

  ad::NodeId finish(double penalty) {
    return tape.add(spend_acc,
                    tape.mul(tape.max_const(g_cur, 0.0),
                             tape.constant(penalty)));
  }
};

struct GruTapeRefs {
  std::array<ad::NodeId, 9> params;
  ad::NodeId loss = -1;
  ad::NodeId final_goal = -1;
};

GruTapeRefs build_gru_tape(EpisodeTapeState* st, const GruParams& p,
                           const BiddingProblem& prob) {
  int T = prob.n_periods();
  int n = p.state_dim;
  st->start(prob);
  ad::Tape& tp = st->tape;
  GruTapeRefs refs;
  refs.params = {tp.param(p.wz), tp.param(p.uz), tp.param(p.bz),
                 tp.param(p.wr), tp.param(p.ur), tp.param(p.br),
                 tp.param(p.wc), tp.param(p.uc), tp.param(p.bc)};
  auto [wz, uz, bz, wr, ur, br, wc, uc, bc] = refs.params;

  std::vector<double> cand_scale(n, 1.0), cand_shift(n, 0.0);
  cand_scale[0] = 0.5 * p.bid_cap;
  cand_shift[0] = 0.5 * p.bid_cap;
  std::vector<double> neg_one(n, -1.0), one(n, 1.0);
  std::vector<double> zeros(n, 0.0);

  double goal_scale = std::max(prob.goal, 1e-12);
  double vol_scale = std::max(p.norm.mean_volume, 1e-12);
  double spend_scale = vol_scale * std::max(p.norm.mean_price, 1e-12);

  ad::NodeId h = tp.constant(zeros);
  st->init_episode(prob.goal);
  ad::NodeId inv_goal = tp.constant(1.0 / goal_scale);
  ad::NodeId inv_vol = tp.constant(1.0 / vol_scale);
  ad::NodeId inv_spend = tp.constant(1.0 / spend_scale);

  for (int t = 0; t < T; ++t) {
    ad::NodeId parts[4] = {
        tp.constant(static_cast<double>(T - t) / T),
        tp.mul(st->g_cur, inv_goal),
        tp.mul(st->v_prev, inv_vol),
        tp.mul(st->s_prev, inv_spend),
    };
    ad::NodeId x = tp.pack(parts);
    if (t == 0) {
      // Warm start: the state adopts the first candidate outright.
      ad::NodeId u0 = tp.add(tp.matvec(wc, x), bc);
      h = tp.affine(tp.tanh(u0), cand_scale, cand_shift);
    } else {
      ad::NodeId z = tp.sigmoid(
          tp.add(tp.add(tp.matvec(wz, x), tp.matvec(uz, h)), bz));
      ad::NodeId r = tp.sigmoid(
          tp.add(tp.add(tp.matvec(wr, x), tp.matvec(ur, h)), br));
      ad::NodeId u =
          tp.add(tp.add(tp.matvec(wc, x), tp.matvec(uc, tp.mul(r, h))), bc);
      ad::NodeId cand = tp.affine(tp.tanh(u), cand_scale, cand_shift);
      ad::NodeId open = tp.affine(z, neg_one, one);
      h = tp.add(tp.mul(z, h), tp.mul(open, cand));
    }
    st->apply_market(prob, t, tp.index(h, 0));
  }
  refs.final_goal = st->g_cur;
  refs.loss = st->finish(prob.penalty);
  return refs;
}

EpisodeTapeState& tape_scratch() {
  static thread_local EpisodeTapeState st;
  return st;
}

}  // namespace

double gru_episode_loss(const GruParams& params, const BiddingProblem& prob) {
  int T = prob.n_periods();
  std::vector<double> state(params.state_dim, 0.0);
  double g = prob.goal, v_prev = 0.0, s_prev = 0.0, spend = 0.0;
  for (int t = 0; t < T; ++t) {
    Observation obs{T - t, g, v_prev, s_prev};
    std::vector<double> x =
        normalize_observation(obs, T, prob.goal, params.norm);
    GruStep step =
        t == 0 ? gru_warm_start(x, params) : gru_act(state, x, params);
    state = std::move(step.state);
    const ResponseCurves* rc = curves_or_throw(prob, t);
    ad::MonotoneCurve win{rc->x, rc->win};
    ad::MonotoneCurve sp{rc->x, rc->spend};
    double vt = win.eval(step.bid) * prob.intensity_path[t];
    double st = sp.eval(step.bid) * prob.intensity_path[t];
    spend += st;
    g -= vt;
    v_prev = vt;
    s_prev = st;
  }
  return spend + std::max(0.0, g) * prob.penalty;
}

std::pair<double, double> gru_episode_loss_tape(const GruParams& params,
                                                const BiddingProblem& prob) {
  EpisodeTapeState& st = tape_scratch();
  GruTapeRefs refs = build_gru_tape(&st, params, prob);
  double fg = st.tape.scalar(refs.final_goal);
  double margin = std::abs(fg) <= std::abs(st.knot_margin) ? fg : st.knot_margin;
  return {st.tape.scalar(refs.loss), margin};
}

EpisodeGradient gru_episode_loss_grad(const GruParams& params,
                                      const BiddingProblem& prob) {
  EpisodeTapeState& st = tape_scratch();
  GruTapeRefs refs = build_gru_tape(&st, params, prob);
  st.tape.backward(refs.loss);
  EpisodeGradient out;
  out.loss = st.tape.scalar(refs.loss);
  out.grad.reserve(params.n_params());
  for (ad::NodeId id : refs.params) {
    auto adj = st.tape.adjoint(id);
    out.grad.insert(out.grad.end(), adj.begin(), adj.end());
  }
  return out;
}

namespace {

// tail-normalized curve weights; matches reference_volume() bit for bit.
std::vector<double> reference_ratios(const HarmonicCurve& curve, int T) {
  std::vector<double> ratios(T);
  for (int t = 0; t < T; ++t) {
    double tail = 0.0;
    for (int s = t; s < T; ++s) tail += curve.weight(s, T);
    ratios[t] = tail > 0.0 ? curve.weight(t, T) / tail : 1.0 / (T - t);
  }
  return ratios;
}

struct PiTapeRefs {
  ad::NodeId theta = -1;
  ad::NodeId loss = -1;
  ad::NodeId final_goal = -1;
};

PiTapeRefs build_pi_tape(EpisodeTapeState* st, const PiParams& p,
                         double bid_cap, const BiddingProblem& prob) {
  int T = prob.n_periods();
  st->start(prob);
  ad::Tape& tp = st->tape;
  PiTapeRefs refs;
  double theta[2] = {p.theta_p, p.theta_i};
  refs.theta = tp.param(theta);
  ad::NodeId thp = tp.index(refs.theta, 0);
  ad::NodeId thi = tp.index(refs.theta, 1);
  std::vector<double> ratios = reference_ratios(p.reference, T);
  st->init_episode(prob.goal);
  ad::NodeId integral = tp.constant(0.0);
  for (int t = 0; t < T; ++t) {
    ad::NodeId ref = tp.mul(st->g_cur, tp.constant(ratios[t]));
    ad::NodeId err = tp.sub(ref, st->v_prev);
    ad::NodeId cand = tp.add(integral, err);
    ad::NodeId raw = tp.add(tp.mul(thp, err), tp.mul(thi, cand));
    ad::NodeId bid = tp.min_const(tp.max_const(raw, 0.0), bid_cap);
    double raw_v = tp.scalar(raw);
    if (raw_v >= 0.0 && raw_v <= bid_cap) integral = cand;
    st->apply_market(prob, t, bid);
  }
  refs.final_goal = st->g_cur;
  refs.loss = st->finish(prob.penalty);
  return refs;
}

}  // namespace

double pi_episode_loss(const PiParams& params, double bid_cap,
                       const BiddingProblem& prob) {
  int T = prob.n_periods();
  PiState state;
  double g = prob.goal, v_prev = 0.0, s_prev = 0.0, spend = 0.0;
  for (int t = 0; t < T; ++t) {
    Observation obs{T - t, g, v_prev, s_prev};
    PiStep step = pi_act(state, obs, params, t, T, bid_cap);
    state = step.state;
    const ResponseCurves* rc = curves_or_throw(prob, t);
    ad::MonotoneCurve win{rc->x, rc->win};
    ad::MonotoneCurve sp{rc->x, rc->spend};
    double vt = win.eval(step.bid) * prob.intensity_path[t];
    double st = sp.eval(step.bid) * prob.intensity_path[t];
    spend += st;
    g -= vt;
    v_prev = vt;
    s_prev = st;
  }
  return spend + std::max(0.0, g) * prob.penalty;
}

EpisodeGradient pi_episode_loss_grad(const PiParams& params, double bid_cap,
                                     const BiddingProblem& prob) {
  EpisodeTapeState& st = tape_scratch();
  PiTapeRefs refs = build_pi_tape(&st, params, bid_cap, prob);
  st.tape.backward(refs.loss);
  EpisodeGradient out;
  out.loss = st.tape.scalar(refs.loss);
  auto adj = st.tape.adjoint(refs.theta);
  out.grad.assign(adj.begin(), adj.end());
  return out;
}

void save_training_log(const std::filesystem::path& p,
                       std::span<const TrainLogRow> rows) {
  std::string out = "step,lr,batch_loss,grad_norm,clipped,val_loss\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + fmt_double(r.lr) + "," +
           fmt_double(r.batch_loss) + "," + fmt_double(r.grad_norm) + "," +
           (r.clipped ? "1" : "0") + ",";
    if (r.has_val) out += fmt_double(r.val_loss);
    out += "\n";
  }
  write_text_file(p, out);
}

namespace {

using GradFn =
    std::function<EpisodeGradient(std::span<const double>,
                                  const BiddingProblem&)>;
using LossFn =
    std::function<double(std::span<const double>, const BiddingProblem&)>;

struct SgdOutcome {
  std::vector<double> best;
  std::vector<double> last;
  double best_val = 0.0;
  double final_val = 0.0;
  std::vector<TrainLogRow> log;
  bool diverged = false;
  int steps = 0;
};

double mean_loss(const LossFn& loss_fn, std::span<const double> params,
                 std::span<const BiddingProblem> problems) {
  double acc = 0.0;
  for (const auto& prob : problems) acc += loss_fn(params, prob);
  return acc / static_cast<double>(problems.size());
}

// Per-problem gradients are computed (possibly in parallel) into slots
// indexed by batch position, then reduced in that order: results never
// depend on the thread count.
void batch_gradients(const GradFn& grad_fn, std::span<const double> params,
                     std::span<const BiddingProblem> problems,
                     std::span<const int> order, std::size_t begin,
                     std::size_t end, int threads,
                     std::vector<EpisodeGradient>* out) {
  std::size_t count = end - begin;
  out->resize(count);
  int workers = std::max(1, std::min<int>(threads, static_cast<int>(count)));
  if (workers == 1) {
    for (std::size_t i = 0; i < count; ++i)
      (*out)[i] = grad_fn(params, problems[order[begin + i]]);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (std::size_t i = w; i < count; i += workers)
        (*out)[i] = grad_fn(params, problems[order[begin + i]]);
    });
  }
  for (auto& th : pool) th.join();
}

SgdOutcome run_sgd(std::vector<double> params,
                   std::span<const BiddingProblem> problems,
                   std::span<const BiddingProblem> validation,
                   const TrainConfig& cfg, const GradFn& grad_fn,
                   const LossFn& loss_fn) {
  if (problems.empty()) throw std::invalid_argument("no training problems");
  if (validation.empty())
    throw std::invalid_argument("no validation problems");
  if (cfg.batch_size < 1) throw std::invalid_argument("batch size >= 1");

  SgdOutcome out;
  out.best = params;
  double initial_val = mean_loss(loss_fn, params, validation);
  out.best_val = initial_val;
  out.final_val = initial_val;

  std::vector<int> order(problems.size());
  std::vector<EpisodeGradient> slots;
  std::vector<double> grad(params.size());
  int step = 0;
  int divergence_streak = 0;

  auto validate_now = [&](TrainLogRow* row) {
    double v = mean_loss(loss_fn, params, validation);
    row->has_val = true;
    row->val_loss = v;
    out.final_val = v;
    if (v < out.best_val) {
      out.best_val = v;
      out.best = params;
    }
    if (v > 10.0 * std::max(initial_val, 1e-12))
      ++divergence_streak;
    else
      divergence_streak = 0;
  };

  for (int epoch = 0; epoch < cfg.epochs && !out.diverged; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i)
      order[i] = static_cast<int>(i);
    Rng shuffle_rng(Rng::derive(cfg.seed, 1000 + epoch));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(shuffle_rng.raw() % i);
      std::swap(order[i - 1], order[j]);
    }
    for (std::size_t begin = 0; begin < order.size() && !out.diverged;
         begin += cfg.batch_size) {
      std::size_t end =
          std::min(order.size(), begin + static_cast<std::size_t>(
                                             cfg.batch_size));
      TrainLogRow row;
      row.step = step;
      row.lr = learning_rate(step, cfg);
      bool failed = false;
      try {
        batch_gradients(grad_fn, params, problems, order, begin, end,
                        cfg.threads, &slots);
      } catch (const std::runtime_error&) {
        // Non-finite values inside the backward pass: treat as divergence
        // and fall back to the best checkpoint.
        failed = true;
      }
      if (failed) {
        out.diverged = true;
        break;
      }
      double n_batch = static_cast<double>(end - begin);
      std::fill(grad.begin(), grad.end(), 0.0);
      double batch_loss = 0.0;
      for (const auto& s : slots) {
        batch_loss += s.loss;
        for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += s.grad[i];
      }
      batch_loss /= n_batch;
      for (double& g : grad) g /= n_batch;
      ClipResult clip = clip_gradient(grad, cfg.clip_threshold);
      for (std::size_t i = 0; i < params.size(); ++i)
        params[i] -= row.lr * grad[i];
      row.batch_loss = batch_loss;
      row.grad_norm = clip.norm;
      row.clipped = clip.clipped;
      ++step;
      if (cfg.validation_period > 0 && step % cfg.validation_period == 0) {
        validate_now(&row);
        if (divergence_streak >= 3) out.diverged = true;
      }
      out.log.push_back(row);
    }
  }
  if (!out.diverged && !out.log.empty() && !out.log.back().has_val)
    validate_now(&out.log.back());
  out.last = std::move(params);
  out.steps = step;
  return out;
}

}  // namespace

TrainResult train_gru(const GruParams& init,
                      std::span<const BiddingProblem> problems,
                      std::span<const BiddingProblem> validation,
                      const TrainConfig& cfg) {
  GruParams shape = init;
  auto with_flat = [&shape](std::span<const double> flat) {
    GruParams p = shape;
    p.unflatten(flat);
    return p;
  };
  GradFn grad_fn = [&](std::span<const double> flat,
                       const BiddingProblem& prob) {
    return gru_episode_loss_grad(with_flat(flat), prob);
  };
  LossFn loss_fn = [&](std::span<const double> flat,
                       const BiddingProblem& prob) {
    return gru_episode_loss(with_flat(flat), prob);
  };
  SgdOutcome sgd =
      run_sgd(init.flatten(), problems, validation, cfg, grad_fn, loss_fn);
  TrainResult result;
  result.params = init;
  result.params.unflatten(sgd.best);
  result.final_params = init;
  result.final_params.unflatten(sgd.last);
  result.best_val_loss = sgd.best_val;
  result.final_val_loss = sgd.final_val;
  result.log = std::move(sgd.log);
  result.diverged = sgd.diverged;
  result.steps = sgd.steps;
  return result;
}

PiTrainResult tune_pi(const PiParams& init, double bid_cap,
                      std::span<const BiddingProblem> problems,
                      std::span<const BiddingProblem> validation,
                      const TrainConfig& cfg) {
  PiParams shape = init;
  auto with_flat = [&shape](std::span<const double> flat) {
    PiParams p = shape;
    p.theta_p = flat[0];
    p.theta_i = flat[1];
    return p;
  };
  GradFn grad_fn = [&](std::span<const double> flat,
                       const BiddingProblem& prob) {
    return pi_episode_loss_grad(with_flat(flat), bid_cap, prob);
  };
  LossFn loss_fn = [&](std::span<const double> flat,
                       const BiddingProblem& prob) {
    return pi_episode_loss(with_flat(flat), bid_cap, prob);
  };
  SgdOutcome sgd = run_sgd({init.theta_p, init.theta_i}, problems, validation,
                           cfg, grad_fn, loss_fn);
  PiTrainResult result;
  result.params = with_flat(sgd.best);
  result.final_params = with_flat(sgd.last);
  result.best_val_loss = sgd.best_val;
  result.final_val_loss = sgd.final_val;
  result.log = std::move(sgd.log);
  result.diverged = sgd.diverged;
  return result;
}

double mean_validation_loss_gru(const GruParams& params,
                                std::span<const BiddingProblem> validation) {
  double acc = 0.0;
  for (const auto& prob : validation) acc += gru_episode_loss(params, prob);
  return acc / static_cast<double>(validation.size());
}

double mean_validation_loss_pi(const PiParams& params, double bid_cap,
                               std::span<const BiddingProblem> validation) {
  double acc = 0.0;
  for (const auto& prob : validation)
    acc += pi_episode_loss(params, bid_cap, prob);
  return acc / static_cast<double>(validation.size());
}

}  // namespace bidlab
