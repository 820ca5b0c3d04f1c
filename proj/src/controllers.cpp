#include "bidlab/controllers.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab {

namespace {
constexpr double kTwoPi = 6.283185307179586477;
}

double HarmonicCurve::weight(int t, int n_periods) const {
  double w = c0 + c1 * std::cos(kTwoPi * t / n_periods + phi1) +
             c2 * std::cos(2.0 * kTwoPi * t / n_periods + phi2);
  return std::max(0.0, w);
}

double reference_volume(int t, int n_periods, double remaining_goal,
                        const HarmonicCurve& curve) {
  double tail = 0.0;
  for (int s = t; s < n_periods; ++s) tail += curve.weight(s, n_periods);
  double ratio = tail > 0.0 ? curve.weight(t, n_periods) / tail
                            : 1.0 / (n_periods - t);
  return remaining_goal * ratio;
}

namespace {

// Solves the dense n x n system in place (partial pivoting). Small n only.
void solve_linear(std::vector<double>& a, std::vector<double>& b, int n) {
  for (int col = 0; col < n; ++col) {
    int piv = col;
    for (int r = col + 1; r < n; ++r)
      if (std::abs(a[r * n + col]) > std::abs(a[piv * n + col])) piv = r;
    if (std::abs(a[piv * n + col]) < 1e-12)
      throw std::runtime_error("singular system in curve fit");
    if (piv != col) {
      for (int c = 0; c < n; ++c) std::swap(a[piv * n + c], a[col * n + c]);
      std::swap(b[piv], b[col]);
    }
    for (int r = col + 1; r < n; ++r) {
      double f = a[r * n + col] / a[col * n + col];
      for (int c = col; c < n; ++c) a[r * n + c] -= f * a[col * n + c];
      b[r] -= f * b[col];
    }
  }
  for (int r = n - 1; r >= 0; --r) {
    double acc = b[r];
    for (int c = r + 1; c < n; ++c) acc -= a[r * n + c] * b[c];
    b[r] = acc / a[r * n + r];
  }
}

}  // namespace

HarmonicCurve fit_reference_curve(
    std::span<const std::vector<double>> curves) {
  if (curves.empty()) throw std::invalid_argument("no curves to fit");
  std::size_t n = curves[0].size();
  if (n < 5) throw std::invalid_argument("need >= 5 periods to fit");
  std::vector<double> target(n, 0.0);
  int used = 0;
  for (const auto& c : curves) {
    if (c.size() != n)
      throw std::invalid_argument("curves must share one length");
    double mean = 0.0;
    for (double v : c) mean += v;
    mean /= static_cast<double>(n);
    if (mean <= 0.0) continue;
    for (std::size_t t = 0; t < n; ++t) target[t] += c[t] / mean;
    ++used;
  }
  if (used == 0) return HarmonicCurve{};
  for (double& v : target) v /= used;

  // Regressors: 1, cos wt, sin wt, cos 2wt, sin 2wt with w = 2*pi/T.
  constexpr int kDim = 5;
  std::vector<double> ata(kDim * kDim, 0.0), aty(kDim, 0.0);
  for (std::size_t t = 0; t < n; ++t) {
    double w = kTwoPi * static_cast<double>(t) / static_cast<double>(n);
    double row[kDim] = {1.0, std::cos(w), std::sin(w), std::cos(2.0 * w),
                        std::sin(2.0 * w)};
    for (int i = 0; i < kDim; ++i) {
      for (int j = 0; j < kDim; ++j) ata[i * kDim + j] += row[i] * row[j];
      aty[i] += row[i] * target[t];
    }
  }
  solve_linear(ata, aty, kDim);

  HarmonicCurve out;
  out.c0 = aty[0];
  out.c1 = std::hypot(aty[1], aty[2]);
  out.phi1 = out.c1 > 0.0 ? std::atan2(-aty[2], aty[1]) : 0.0;
  out.c2 = std::hypot(aty[3], aty[4]);
  out.phi2 = out.c2 > 0.0 ? std::atan2(-aty[4], aty[3]) : 0.0;
  return out;
}

PiStep pi_act(const PiState& state, const Observation& obs,
              const PiParams& params, int t, int n_periods, double bid_cap) {
  double ref = reference_volume(t, n_periods, obs.remaining_goal,
                                params.reference);
  double error = ref - obs.last_volume;
  double integral = state.integral + error;
  double raw = params.theta_p * error + params.theta_i * integral;
  PiStep step;
  step.state.last_error = error;
  if (raw >= 0.0 && raw <= bid_cap) {
    step.bid = raw;
    step.state.integral = integral;
  } else {
    step.bid = std::clamp(raw, 0.0, bid_cap);
    step.state.integral = state.integral;  // conditional integration
  }
  step.state.last_control = step.bid;
  return step;
}

PiParams default_pi_params(double pace, double mean_price) {
  // A one-pace-unit error should move the bid by about half the mean price,
  // so early bids land inside the landscape's support.
  PiParams p;
  p.theta_p = 0.5 * mean_price / std::max(pace, 1e-12);
  p.theta_i = 0.1 * mean_price / std::max(pace, 1e-12);
  return p;
}

void PiController::reset(const EpisodeContext& ctx) {
  ctx_ = ctx;
  state_ = PiState{};
}

double PiController::act(const Observation& obs, int t) {
  PiStep step = pi_act(state_, obs, params_, t, ctx_.n_periods, ctx_.penalty);
  state_ = step.state;
  return step.bid;
}

GruParams GruParams::init(int state_dim, int input_dim, double bid_cap,
                          std::uint64_t seed) {
  GruParams p;
  p.state_dim = state_dim;
  p.input_dim = input_dim;
  p.bid_cap = bid_cap;
  Rng rng(seed);
  auto fill = [&](std::vector<double>& v, int n) {
    v.resize(n);
    for (double& x : v) x = rng.uniform(-0.1, 0.1);
  };
  fill(p.wz, state_dim * input_dim);
  fill(p.uz, state_dim * state_dim);
  fill(p.wr, state_dim * input_dim);
  fill(p.ur, state_dim * state_dim);
  fill(p.wc, state_dim * input_dim);
  fill(p.uc, state_dim * state_dim);
  // Positive update-gate bias: early training keeps state trajectories
  // smooth instead of resetting each period.
  p.bz.assign(state_dim, 1.0);
  p.br.assign(state_dim, 0.0);
  p.bc.assign(state_dim, 0.0);
  return p;
}

std::size_t GruParams::n_params() const {
  return 3 * static_cast<std::size_t>(state_dim) *
             (input_dim + state_dim + 1);
}

std::vector<double> GruParams::flatten() const {
  std::vector<double> out;
  out.reserve(n_params());
  for (const auto* v : {&wz, &uz, &bz, &wr, &ur, &br, &wc, &uc, &bc})
    out.insert(out.end(), v->begin(), v->end());
  return out;
}

void GruParams::unflatten(std::span<const double> flat) {
  if (flat.size() != n_params())
    throw std::invalid_argument("flat parameter size mismatch");
  const double* p = flat.data();
  for (auto* v : {&wz, &uz, &bz, &wr, &ur, &br, &wc, &uc, &bc}) {
    std::copy(p, p + v->size(), v->begin());
    p += v->size();
  }
}

namespace {

inline void mat_vec_acc(const std::vector<double>& m,
                        std::span<const double> x, std::vector<double>& out) {
  int rows = static_cast<int>(out.size());
  int cols = static_cast<int>(x.size());
  for (int i = 0; i < rows; ++i) {
    double acc = out[i];
    for (int j = 0; j < cols; ++j) acc += m[i * cols + j] * x[j];
    out[i] = acc;
  }
}

inline double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

GruStep gru_act(std::span<const double> state, std::span<const double> input,
                const GruParams& p) {
  int n = p.state_dim;
  std::vector<double> z(p.bz), r(p.br), c(p.bc);
  mat_vec_acc(p.wz, input, z);
  mat_vec_acc(p.uz, state, z);
  mat_vec_acc(p.wr, input, r);
  mat_vec_acc(p.ur, state, r);
  for (int i = 0; i < n; ++i) {
    z[i] = sigmoid(z[i]);
    r[i] = sigmoid(r[i]);
  }
  std::vector<double> rh(n);
  for (int i = 0; i < n; ++i) rh[i] = r[i] * state[i];
  mat_vec_acc(p.wc, input, c);
  mat_vec_acc(p.uc, rh, c);
  GruStep step;
  step.state.resize(n);
  for (int i = 0; i < n; ++i) {
    double cand = i == 0 ? 0.5 * p.bid_cap * (std::tanh(c[i]) + 1.0)
                         : std::tanh(c[i]);
    // Update gate keeps the old state: with the +1 bias init the state (and
    // so the bid) moves slowly, which stabilizes early training.
    step.state[i] = z[i] * state[i] + (1.0 - z[i]) * cand;
  }
  step.bid = step.state[0];
  return step;
}

std::vector<double> normalize_observation(const Observation& obs,
                                          int n_periods, double initial_goal,
                                          const GruNormalizers& norm) {
  double goal_scale = std::max(initial_goal, 1e-12);
  double vol_scale = std::max(norm.mean_volume, 1e-12);
  double spend_scale = vol_scale * std::max(norm.mean_price, 1e-12);
  return {static_cast<double>(obs.periods_left) / n_periods,
          obs.remaining_goal / goal_scale, obs.last_volume / vol_scale,
          obs.last_spend / spend_scale};
}

GruStep gru_warm_start(std::span<const double> input, const GruParams& p) {
  std::vector<double> c(p.bc);
  mat_vec_acc(p.wc, input, c);
  GruStep step;
  step.state.resize(p.state_dim);
  for (int i = 0; i < p.state_dim; ++i)
    step.state[i] = i == 0 ? 0.5 * p.bid_cap * (std::tanh(c[i]) + 1.0)
                           : std::tanh(c[i]);
  step.bid = step.state[0];
  return step;
}

void GruController::reset(const EpisodeContext& ctx) {
  ctx_ = ctx;
  state_.clear();
}

double GruController::act(const Observation& obs, int) {
  std::vector<double> x =
      normalize_observation(obs, ctx_.n_periods, ctx_.goal, params_.norm);
  GruStep step = state_.empty() ? gru_warm_start(x, params_)
                                : gru_act(state_, x, params_);
  state_ = std::move(step.state);
  // The readout is bounded by the model's own cap; the episode penalty only
  // matters if the model was trained for a different one.
  return std::clamp(step.bid, 0.0, ctx_.penalty);
}

namespace {

std::vector<std::string> read_model_lines(const std::filesystem::path& p) {
  std::istringstream in(read_text_file(p));
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line))
    if (!line.empty()) lines.push_back(line);
  if (lines.empty() || lines[0] != "bidlab-model v1")
    throw std::runtime_error("not a model file: " + p.string());
  return lines;
}

std::pair<std::string, std::string> split_kv(const std::string& line) {
  auto pos = line.find(' ');
  if (pos == std::string::npos)
    throw std::runtime_error("bad model line: " + line);
  return {line.substr(0, pos), line.substr(pos + 1)};
}

}  // namespace

ModelType peek_model_type(const std::filesystem::path& p) {
  auto lines = read_model_lines(p);
  auto [key, value] = split_kv(lines.at(1));
  if (key != "type") throw std::runtime_error("model file missing type");
  if (value == "pi") return ModelType::pi;
  if (value == "gru") return ModelType::gru;
  throw std::runtime_error("unknown model type: " + value);
}

void save_pi_model(const std::filesystem::path& p, const PiParams& params) {
  std::string out = "bidlab-model v1\ntype pi\n";
  out += "theta_p " + fmt_double(params.theta_p) + "\n";
  out += "theta_i " + fmt_double(params.theta_i) + "\n";
  const HarmonicCurve& c = params.reference;
  out += "curve " + fmt_double(c.c0) + " " + fmt_double(c.c1) + " " +
         fmt_double(c.phi1) + " " + fmt_double(c.c2) + " " +
         fmt_double(c.phi2) + "\n";
  write_text_file(p, out);
}

PiParams load_pi_model(const std::filesystem::path& p) {
  auto lines = read_model_lines(p);
  PiParams params;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    auto [key, value] = split_kv(lines[i]);
    if (key == "type") {
      if (value != "pi") throw std::runtime_error("not a pi model");
    } else if (key == "theta_p") {
      params.theta_p = parse_double(value);
    } else if (key == "theta_i") {
      params.theta_i = parse_double(value);
    } else if (key == "curve") {
      std::istringstream ss(value);
      std::string a, b, c, d, e;
      ss >> a >> b >> c >> d >> e;
      params.reference = {parse_double(a), parse_double(b), parse_double(c),
                          parse_double(d), parse_double(e)};
    } else {
      throw std::runtime_error("unknown model key: " + key);
    }
  }
  return params;
}

void save_gru_model(const std::filesystem::path& p, const GruParams& params) {
  std::string out = "bidlab-model v1\ntype gru\n";
  out += "state_dim " + std::to_string(params.state_dim) + "\n";
  out += "input_dim " + std::to_string(params.input_dim) + "\n";
  out += "bid_cap " + fmt_double(params.bid_cap) + "\n";
  out += "mean_volume " + fmt_double(params.norm.mean_volume) + "\n";
  out += "mean_price " + fmt_double(params.norm.mean_price) + "\n";
  std::vector<double> flat = params.flatten();
  out += "params " + std::to_string(flat.size()) + "\n";
  for (double v : flat) out += fmt_double(v) + "\n";
  write_text_file(p, out);
}

GruParams load_gru_model(const std::filesystem::path& p) {
  auto lines = read_model_lines(p);
  GruParams params;
  std::size_t i = 1;
  std::size_t n_flat = 0;
  for (; i < lines.size(); ++i) {
    auto [key, value] = split_kv(lines[i]);
    if (key == "type") {
      if (value != "gru") throw std::runtime_error("not a gru model");
    } else if (key == "state_dim") {
      params.state_dim = static_cast<int>(parse_long(value));
    } else if (key == "input_dim") {
      params.input_dim = static_cast<int>(parse_long(value));
    } else if (key == "bid_cap") {
      params.bid_cap = parse_double(value);
    } else if (key == "mean_volume") {
      params.norm.mean_volume = parse_double(value);
    } else if (key == "mean_price") {
      params.norm.mean_price = parse_double(value);
    } else if (key == "params") {
      n_flat = static_cast<std::size_t>(parse_long(value));
      ++i;
      break;
    } else {
      throw std::runtime_error("unknown model key: " + key);
    }
  }
  GruParams sized = GruParams::init(params.state_dim, params.input_dim,
                                    params.bid_cap, 0);
  sized.norm = params.norm;
  if (n_flat != sized.n_params() || lines.size() - i != n_flat)
    throw std::runtime_error("gru model parameter count mismatch");
  std::vector<double> flat(n_flat);
  for (std::size_t k = 0; k < n_flat; ++k)
    flat[k] = parse_double(lines[i + k]);
  sized.unflatten(flat);
  return sized;
}

std::unique_ptr<Controller> load_controller(const std::filesystem::path& p) {
  if (peek_model_type(p) == ModelType::pi)
    return std::make_unique<PiController>(load_pi_model(p));
  return std::make_unique<GruController>(load_gru_model(p));
}

}  // namespace bidlab
