#include "bidlab/dp_solvers.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bidlab/util.hpp"

namespace bidlab {

namespace {
constexpr double kSqrt2 = 1.4142135623730951;

double normal_cdf(double z) { return 0.5 * std::erfc(-z / kSqrt2); }
double normal_pdf(double z) {
  return 0.3989422804014326779 * std::exp(-0.5 * z * z);
}
}  // namespace

MarketResponse response_of(const BidLandscape& l) {
  return {[l](double a) { return l.win_rate_at(a); },
          [l](double a) { return l.spend_rate_at(a); }};
}

MarketResponse gaussian_market(double mean, double sd) {
  auto win = [mean, sd](double a) { return normal_cdf((a - mean) / sd); };
  // E[b 1{0 <= b <= a}] = mean (Phi(za) - Phi(z0)) - sd (phi(za) - phi(z0)).
  auto spend = [mean, sd](double a) {
    double za = (a - mean) / sd;
    double z0 = (0.0 - mean) / sd;
    if (za < z0) return 0.0;
    return mean * (normal_cdf(za) - normal_cdf(z0)) -
           sd * (normal_pdf(za) - normal_pdf(z0));
  };
  return {win, spend};
}

double gaussian_market_quantile(double mean, double sd, double q) {
  // Newton on the CDF from the mean; q must be inside (0, 1).
  double z = 0.0;
  for (int i = 0; i < 80; ++i) {
    double f = normal_cdf(z) - q;
    double d = normal_pdf(z);
    if (d < 1e-300) break;
    double step = f / d;
    z -= std::clamp(step, -1.0, 1.0);
  }
  return mean + sd * z;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i)
    v[i] = lo + (hi - lo) * static_cast<double>(i) / (n - 1);
  v.front() = lo;
  v.back() = hi;
  return v;
}

PolicyField::PolicyField(std::vector<double> t_grid,
                         std::vector<double> g_grid,
                         std::vector<double> h_grid, double penalty)
    : t_(std::move(t_grid)),
      g_(std::move(g_grid)),
      h_(std::move(h_grid)),
      penalty_(penalty) {
  bid_.assign(t_.size() * g_.size() * h_.size(), 0.0);
  cost_.assign(bid_.size(), 0.0);
}

namespace {

// Bracketing index and fraction for linear interpolation; clamps outside.
struct Loc {
  int i;
  double f;
  bool clamped;
};

Loc locate(const std::vector<double>& grid, double x) {
  int n = static_cast<int>(grid.size());
  if (n == 1) return {0, 0.0, x != grid[0]};
  if (x <= grid.front()) return {0, 0.0, x < grid.front()};
  if (x >= grid.back()) return {n - 2, 1.0, x > grid.back()};
  auto it = std::upper_bound(grid.begin(), grid.end(), x);
  int i = static_cast<int>(it - grid.begin()) - 1;
  return {i, (x - grid[i]) / (grid[i + 1] - grid[i]), false};
}

}  // namespace

double PolicyField::interp(const std::vector<double>& table, double t,
                           double g, double h) const {
  Loc lt = locate(t_, t), lg = locate(g_, g), lh = locate(h_, h);
  if (lt.clamped || lg.clamped || lh.clamped) ++clamps_;
  auto at = [&](int ti, int gi, int hi) { return table[idx(ti, gi, hi)]; };
  double out = 0.0;
  int ng = static_cast<int>(g_.size()), nh = static_cast<int>(h_.size());
  for (int dt = 0; dt < 2; ++dt) {
    double wt = dt ? lt.f : 1.0 - lt.f;
    if (wt == 0.0) continue;
    int ti = std::min(lt.i + dt, static_cast<int>(t_.size()) - 1);
    for (int dg = 0; dg < 2; ++dg) {
      double wg = dg ? lg.f : 1.0 - lg.f;
      if (wg == 0.0) continue;
      int gi = std::min(lg.i + dg, ng - 1);
      for (int dh = 0; dh < 2; ++dh) {
        double wh = dh ? lh.f : 1.0 - lh.f;
        if (wh == 0.0) continue;
        int hi = std::min(lh.i + dh, nh - 1);
        out += wt * wg * wh * at(ti, gi, hi);
      }
    }
  }
  return out;
}

double PolicyField::bid_at(double t, double g, double h) const {
  return interp(bid_, t, g, h);
}

double PolicyField::cost_at(double t, double g, double h) const {
  return interp(cost_, t, g, h);
}

double PolicyField::max_bid() const {
  return *std::max_element(bid_.begin(), bid_.end());
}

double PolicyField::min_bid() const {
  return *std::min_element(bid_.begin(), bid_.end());
}

namespace {
std::vector<int> stride_indices(int n, int stride) {
  std::vector<int> out;
  for (int i = 0; i < n; i += std::max(1, stride)) out.push_back(i);
  if (out.back() != n - 1) out.push_back(n - 1);
  return out;
}
}  // namespace

void PolicyField::save_csv(const std::filesystem::path& p, int stride_t,
                           int stride_g, int stride_h) const {
  auto ti = stride_indices(static_cast<int>(t_.size()), stride_t);
  auto gi = stride_indices(static_cast<int>(g_.size()), stride_g);
  auto hi = stride_indices(static_cast<int>(h_.size()), stride_h);
  nlohmann::json head;
  head["penalty"] = penalty_;
  auto pick = [](const std::vector<double>& v, const std::vector<int>& ix) {
    std::vector<double> out;
    for (int i : ix) out.push_back(v[i]);
    return out;
  };
  head["t"] = pick(t_, ti);
  head["g"] = pick(g_, gi);
  head["h"] = pick(h_, hi);
  std::string out = "# " + head.dump() + "\nt,g,h,bid,cost\n";
  for (int a : ti)
    for (int b : gi)
      for (int c : hi)
        out += fmt_double(t_[a]) + "," + fmt_double(g_[b]) + "," +
               fmt_double(h_[c]) + "," + fmt_double(bid_[idx(a, b, c)]) +
               "," + fmt_double(cost_[idx(a, b, c)]) + "\n";
  write_text_file(p, out);
}

PolicyField PolicyField::load_csv(const std::filesystem::path& p) {
  std::istringstream in(read_text_file(p));
  std::string line;
  if (!std::getline(in, line) || line.size() < 2 || line[0] != '#')
    throw std::runtime_error("missing policy field header: " + p.string());
  nlohmann::json head = nlohmann::json::parse(line.substr(1));
  PolicyField f(head["t"].get<std::vector<double>>(),
                head["g"].get<std::vector<double>>(),
                head["h"].get<std::vector<double>>(),
                head["penalty"].get<double>());
  if (!std::getline(in, line) || line != "t,g,h,bid,cost")
    throw std::runtime_error("missing policy field columns: " + p.string());
  std::size_t row = 0;
  std::size_t total = f.t_.size() * f.g_.size() * f.h_.size();
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (row >= total)
      throw std::runtime_error("policy field has extra rows: " + p.string());
    auto fields = split_csv(line);
    if (fields.size() != 5)
      throw std::runtime_error("bad policy field row: " + line);
    f.bid_[row] = parse_double(fields[3]);
    f.cost_[row] = parse_double(fields[4]);
    ++row;
  }
  if (row != total)
    throw std::runtime_error("policy field has missing rows: " + p.string());
  return f;
}

void DeterministicKernel::nodes(
    int, double h, std::vector<std::pair<double, double>>* out) const {
  out->emplace_back(std::max(0.0, h + drift_), 1.0);
}

void PathKernel::nodes(int t, double h,
                       std::vector<std::pair<double, double>>* out) const {
  // Transition into period t+1. Past the path's end (the terminal slice,
  // where cost no longer depends on H) the intensity is held.
  std::size_t next = static_cast<std::size_t>(t) + 1;
  out->emplace_back(next < path_.size() ? path_[next] : h, 1.0);
}

namespace {
// Physicists' Gauss-Hermite nodes for n = 7, ascending.
constexpr double kGhX[7] = {-2.6519613568352334924, -1.6735516287674714450,
                            -0.8162878828589646630, 0.0,
                            0.8162878828589646630,  1.6735516287674714450,
                            2.6519613568352334924};
constexpr double kGhW[7] = {0.00097178124509951915, 0.054515582819127030,
                            0.42560725261012780,    0.81026461755680733,
                            0.42560725261012780,    0.054515582819127030,
                            0.00097178124509951915};
}  // namespace

void GaussHermiteKernel::nodes(
    int, double h, std::vector<std::pair<double, double>>* out) const {
  double wsum = 0.0;
  for (double w : kGhW) wsum += w;
  for (int i = 0; i < 7; ++i)
    out->emplace_back(std::max(0.0, h + drift_ + sigma_ * kSqrt2 * kGhX[i]),
                      kGhW[i] / wsum);
}

namespace {

// Linear interpolation helpers over the raw cost table used inside the
// solver (clamping silently: the grid is expected to cover the reachable
// set, and beyond it the terminal structure is flat).
double lerp_g(const std::vector<double>& grid, const double* col, int stride,
              double x) {
  Loc l = locate(grid, x);
  double lo = col[l.i * stride];
  if (l.f == 0.0) return lo;
  return (1.0 - l.f) * lo + l.f * col[(l.i + 1) * stride];
}

}  // namespace

PolicyField solve_bellman(int n_periods, std::span<const double> g_grid,
                          std::span<const double> h_grid,
                          const MarketResponse& market,
                          const TransitionKernel& kernel, double penalty,
                          std::span<const double> bid_grid, double dt) {
  if (n_periods < 1) throw std::invalid_argument("need >= 1 period");
  std::vector<double> g(g_grid.begin(), g_grid.end());
  std::vector<double> h(h_grid.begin(), h_grid.end());
  if (!std::is_sorted(g.begin(), g.end()) ||
      !std::is_sorted(h.begin(), h.end()))
    throw std::invalid_argument("grids must be ascending");

  // Bids above the penalty are dominated (paying more than the terminal
  // rate per unit delivered); bidding 0 is always admissible.
  std::vector<double> bids{0.0};
  for (double b : bid_grid)
    if (b >= 0.0 && b <= penalty) bids.push_back(b);
  std::sort(bids.begin(), bids.end());
  bids.erase(std::unique(bids.begin(), bids.end()), bids.end());

  int nb = static_cast<int>(bids.size());
  std::vector<double> win(nb), spend(nb);
  for (int k = 0; k < nb; ++k) {
    win[k] = market.win_rate(bids[k]);
    spend[k] = market.spend_rate(bids[k]);
  }

  int ng = static_cast<int>(g.size());
  int nh = static_cast<int>(h.size());
  std::vector<double> t_nodes(n_periods + 1);
  for (int t = 0; t <= n_periods; ++t) t_nodes[t] = t * dt;
  PolicyField field(t_nodes, g, h, penalty);

  std::vector<double> next(ng * nh), cur(ng * nh);
  for (int gi = 0; gi < ng; ++gi)
    for (int hi = 0; hi < nh; ++hi) {
      double c = penalty * std::max(0.0, g[gi]);
      next[gi * nh + hi] = c;
      field.cost(n_periods, gi, hi) = c;
    }

  std::vector<std::pair<double, double>> nodes;
  std::vector<std::pair<int, double>> hloc;  // located next-H per node
  for (int t = n_periods - 1; t >= 0; --t) {
    for (int hi = 0; hi < nh; ++hi) {
      double hv = h[hi];
      nodes.clear();
      kernel.nodes(t, hv, &nodes);
      hloc.clear();
      for (const auto& node : nodes) {
        Loc l = locate(h, node.first);
        hloc.emplace_back(l.i, l.f);
      }
      for (int gi = 0; gi < ng; ++gi) {
        double best = 0.0, best_bid = 0.0;
        for (int k = 0; k < nb; ++k) {
          double vol = hv * win[k] * dt;
          double cost = hv * spend[k] * dt;
          double ng_val = g[gi] - vol;
          double e = 0.0;
          for (std::size_t m = 0; m < nodes.size(); ++m) {
            auto [hj, fh] = hloc[m];
            const double* lo_col = next.data() + hj;
            double v0 = lerp_g(g, lo_col, nh, ng_val);
            double v = v0;
            if (fh != 0.0) {
              double v1 = lerp_g(g, lo_col + 1, nh, ng_val);
              v = (1.0 - fh) * v0 + fh * v1;
            }
            e += nodes[m].second * v;
          }
          double total = cost + e;
          if (k == 0 || total < best) {
            best = total;
            best_bid = bids[k];
          }
        }
        cur[gi * nh + hi] = best;
        field.bid(t, gi, hi) = best_bid;
        field.cost(t, gi, hi) = best;
      }
    }
    std::swap(cur, next);
  }
  // The terminal slice has no action; repeat the last period's policy so
  // time interpolation near the horizon stays flat.
  for (int gi = 0; gi < ng; ++gi)
    for (int hi = 0; hi < nh; ++hi)
      field.bid(n_periods, gi, hi) = field.bid(n_periods - 1, gi, hi);
  return field;
}

PolicyField solve_bellman(int n_periods, std::span<const double> g_grid,
                          std::span<const double> h_grid,
                          const BidLandscape& landscape,
                          const TransitionKernel& kernel, double penalty,
                          std::span<const double> bid_grid, double dt) {
  return solve_bellman(n_periods, g_grid, h_grid, response_of(landscape),
                       kernel, penalty, bid_grid, dt);
}

namespace {

double brute_force_rec(std::span<const double> path, int t, double g,
                       const std::vector<double>& win,
                       const std::vector<double>& spend,
                       const std::vector<double>& bids, double penalty,
                       double dt) {
  if (t == static_cast<int>(path.size())) return penalty * std::max(0.0, g);
  double best = 0.0;
  for (std::size_t k = 0; k < bids.size(); ++k) {
    double vol = path[t] * win[k] * dt;
    double cost = path[t] * spend[k] * dt;
    double total =
        cost + brute_force_rec(path, t + 1, g - vol, win, spend, bids,
                               penalty, dt);
    if (k == 0 || total < best) best = total;
  }
  return best;
}

}  // namespace

double brute_force_cost(std::span<const double> intensity_path,
                        const MarketResponse& market, double goal,
                        double penalty, std::span<const double> bid_grid,
                        double dt) {
  std::vector<double> bids{0.0};
  for (double b : bid_grid)
    if (b >= 0.0 && b <= penalty) bids.push_back(b);
  std::sort(bids.begin(), bids.end());
  bids.erase(std::unique(bids.begin(), bids.end()), bids.end());
  double space = std::pow(static_cast<double>(bids.size()),
                          static_cast<double>(intensity_path.size()));
  if (space > 1e7)
    throw std::invalid_argument("brute force search space too large");
  std::vector<double> win(bids.size()), spend(bids.size());
  for (std::size_t k = 0; k < bids.size(); ++k) {
    win[k] = market.win_rate(bids[k]);
    spend[k] = market.spend_rate(bids[k]);
  }
  return brute_force_rec(intensity_path, 0, goal, win, spend, bids, penalty,
                         dt);
}

PolicyField solve_pde(const PdeConfig& config, std::span<const double> g_grid,
                      std::span<const double> h_grid,
                      const MarketResponse& market) {
  std::vector<double> g(g_grid.begin(), g_grid.end());
  std::vector<double> h(h_grid.begin(), h_grid.end());
  int ng = static_cast<int>(g.size());
  int nh = static_cast<int>(h.size());
  if (ng < 3 || nh < 3) throw std::invalid_argument("grid too small");
  double dg = (g.back() - g.front()) / (ng - 1);
  double dh = (h.back() - h.front()) / (nh - 1);
  for (int i = 1; i < ng; ++i)
    if (std::abs(g[i] - g[i - 1] - dg) > 1e-9 * std::max(1.0, std::abs(dg)))
      throw std::invalid_argument("g grid must be uniform");
  for (int i = 1; i < nh; ++i)
    if (std::abs(h[i] - h[i - 1] - dh) > 1e-9 * std::max(1.0, std::abs(dh)))
      throw std::invalid_argument("h grid must be uniform");
  if (!(g.front() < 0.0))
    throw std::invalid_argument("g grid must extend below 0");
  if (h.front() < 0.0)
    throw std::invalid_argument("h grid must be nonnegative");
  if (config.n_slices < 2) throw std::invalid_argument("need >= 2 slices");

  double k_pen = config.penalty;
  double f_max = market.win_rate(k_pen);
  double rate = config.sigma * config.sigma / (dh * dh) +
                h.back() * f_max / dg + std::abs(config.drift) / dh;
  double dt_max = config.cfl_safety / rate;
  if (config.dt > 0.0 && config.dt > dt_max)
    throw CflError("time step " + fmt_double(config.dt) +
                       " violates the stability bound; use dt <= " +
                       fmt_double(dt_max),
                   dt_max);
  double dt_target = config.dt > 0.0 ? config.dt : dt_max;

  PolicyField field(linspace(0.0, config.horizon, config.n_slices), g, h,
                    k_pen);

  std::vector<double> a(ng * nh), c(ng * nh), a2(ng * nh), c2(ng * nh);
  for (int gi = 0; gi < ng; ++gi) {
    double ramp = std::clamp(g[gi] / dg, 0.0, 1.0) * k_pen;
    for (int hi = 0; hi < nh; ++hi) {
      a[gi * nh + hi] = ramp;
      c[gi * nh + hi] = k_pen * std::max(0.0, g[gi]);
    }
  }
  int last = config.n_slices - 1;
  for (int gi = 0; gi < ng; ++gi)
    for (int hi = 0; hi < nh; ++hi) {
      field.bid(last, gi, hi) = a[gi * nh + hi];
      field.cost(last, gi, hi) = c[gi * nh + hi];
    }

  double half_sig2 = 0.5 * config.sigma * config.sigma;
  double gap = config.horizon / (config.n_slices - 1);
  for (int slice = last; slice >= 1; --slice) {
    int steps = std::max(1, static_cast<int>(std::ceil(gap / dt_target)));
    double dtau = gap / steps;
    for (int step = 0; step < steps; ++step) {
      for (int gi = 1; gi < ng; ++gi) {
        for (int hi = 0; hi < nh; ++hi) {
          std::size_t i = static_cast<std::size_t>(gi) * nh + hi;
          double av = a[i], cv = c[i];
          double d2a, d2c;
          if (hi == 0) {
            d2a = 2.0 * (a[i + 1] - av);
            d2c = 2.0 * (c[i + 1] - cv);
          } else if (hi == nh - 1) {
            d2a = 2.0 * (a[i - 1] - av);
            d2c = 2.0 * (c[i - 1] - cv);
          } else {
            d2a = a[i + 1] - 2.0 * av + a[i - 1];
            d2c = c[i + 1] - 2.0 * cv + c[i - 1];
          }
          double speed = h[hi] * market.win_rate(av);
          double upwind_a = (av - a[i - static_cast<std::size_t>(nh)]) / dg;
          double upwind_c = (cv - c[i - static_cast<std::size_t>(nh)]) / dg;
          double an = av + dtau * (half_sig2 * d2a / (dh * dh) -
                                   speed * upwind_a);
          double cn = cv + dtau * (half_sig2 * d2c / (dh * dh) -
                                   speed * upwind_c +
                                   h[hi] * market.spend_rate(av));
          a2[i] = std::clamp(an, 0.0, k_pen);
          c2[i] = cn;
        }
      }
      // Boundary rows in G. At G_min the goal is met: no bidding, no cost.
      // At G_max only the bid is pinned (to the penalty); its cost row was
      // already advanced by the upwind rule, which never reads above it.
      for (int hi = 0; hi < nh; ++hi) {
        a2[hi] = 0.0;
        c2[hi] = 0.0;
        a2[static_cast<std::size_t>(ng - 1) * nh + hi] = k_pen;
      }
      std::swap(a, a2);
      std::swap(c, c2);
    }
    for (int gi = 0; gi < ng; ++gi)
      for (int hi = 0; hi < nh; ++hi) {
        field.bid(slice - 1, gi, hi) = a[gi * nh + hi];
        field.cost(slice - 1, gi, hi) = c[gi * nh + hi];
      }
  }
  return field;
}

EpisodeTrace rollout_policy(const PolicyField& field,
                            std::span<const double> intensity_path,
                            const MarketResponse& market, double goal,
                            double dt) {
  EpisodeTrace trace;
  trace.goal = goal;
  trace.penalty = field.penalty();
  int n = static_cast<int>(intensity_path.size());
  trace.bids.resize(n);
  trace.volumes.resize(n);
  trace.spends.resize(n);
  trace.intensities.assign(intensity_path.begin(), intensity_path.end());
  double g = goal;
  for (int t = 0; t < n; ++t) {
    double hv = intensity_path[t];
    double bid = field.bid_at(t * dt, g, hv);
    trace.bids[t] = bid;
    trace.volumes[t] = hv * market.win_rate(bid) * dt;
    trace.spends[t] = hv * market.spend_rate(bid) * dt;
    g -= trace.volumes[t];
  }
  return trace;
}

}  // namespace bidlab
