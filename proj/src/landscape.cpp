#include "bidlab/landscape.hpp"

#include <boost/math/special_functions/erf.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "bidlab/rng.hpp"
#include "bidlab/util.hpp"

namespace bidlab {

namespace {
constexpr int kSmoothingQuadrature = 512;
constexpr double kDistributionTol = 1e-9;
}  // namespace

PriceGrid make_price_grid(double min_price, double max_price, int n_levels) {
  if (!(min_price > 0.0) || !(max_price > min_price) || n_levels < 2)
    throw std::invalid_argument("price grid requires 0 < min < max, n >= 2");
  PriceGrid g;
  g.min_price = min_price;
  g.max_price = max_price;
  g.n_levels = n_levels;
  g.edges.resize(n_levels);
  double ratio = max_price / min_price;
  for (int k = 0; k < n_levels; ++k)
    g.edges[k] =
        min_price * std::pow(ratio, static_cast<double>(k) / (n_levels - 1));
  g.edges.front() = min_price;
  g.edges.back() = max_price;
  return g;
}

PriceGrid default_price_grid() { return make_price_grid(0.01, 100.0, 100); }

std::vector<double> BidNoise::base_quantiles(int m) const {
  std::vector<double> q(m);
  for (int j = 0; j < m; ++j) {
    double u = (j + 0.5) / m;
    switch (family) {
      case NoiseFamily::dirac:
        q[j] = 1.0;
        break;
      case NoiseFamily::gamma:
        // Gamma(shape, scale = 1/shape) has mean 1.
        q[j] = boost::math::gamma_p_inv(shape, u) / shape;
        break;
      case NoiseFamily::lognormal:
        // exp(N(-s^2/2, s^2)) has mean 1.
        q[j] = std::exp(-0.5 * shape * shape +
                        shape * 1.4142135623730951 *
                            boost::math::erf_inv(2.0 * u - 1.0));
        break;
    }
  }
  return q;
}

double BidNoise::sample(double mean, Rng& rng) const {
  switch (family) {
    case NoiseFamily::dirac:
      return mean;
    case NoiseFamily::gamma:
      return rng.gamma(shape, mean / shape);
    case NoiseFamily::lognormal:
      return mean * std::exp(-0.5 * shape * shape + shape * rng.normal());
  }
  return mean;
}

void BidLandscape::validate(bool require_distribution) const {
  int n = grid_.n_levels;
  if (static_cast<int>(grid_.edges.size()) != n ||
      static_cast<int>(win_.size()) != n ||
      static_cast<int>(spend_.size()) != n)
    throw std::invalid_argument("landscape column sizes do not match grid");
  double prev_w = 0.0, prev_s = 0.0;
  for (int k = 0; k < n; ++k) {
    if (!(win_[k] >= prev_w) || !(win_[k] <= 1.0 + 1e-12))
      throw std::invalid_argument("win rate must be nondecreasing in [0,1]");
    if (!(spend_[k] >= prev_s))
      throw std::invalid_argument("spend rate must be nondecreasing");
    prev_w = win_[k];
    prev_s = spend_[k];
  }
  if (require_distribution) {
    if (std::abs(win_.back() - 1.0) > kDistributionTol)
      throw std::invalid_argument("win rate at max_price must equal 1");
    for (int k = 0; k < n; ++k)
      if (spend_[k] > grid_.edges[k] * win_[k] * (1.0 + 1e-12))
        throw std::invalid_argument("spend exceeds bid * volume");
  }
}

std::vector<double> BidLandscape::bin_prices() const {
  std::vector<double> rep(grid_.n_levels);
  rep[0] = grid_.edges[0];
  for (int k = 1; k < grid_.n_levels; ++k)
    rep[k] = std::sqrt(grid_.edges[k - 1] * grid_.edges[k]);
  return rep;
}

BidLandscape BidLandscape::from_cdf(PriceGrid grid, std::vector<double> cdf) {
  BidLandscape l;
  l.grid_ = std::move(grid);
  l.win_ = std::move(cdf);
  l.spend_.resize(l.win_.size());
  std::vector<double> rep = l.bin_prices();
  double acc = 0.0, prev = 0.0;
  for (std::size_t k = 0; k < l.win_.size(); ++k) {
    acc += (l.win_[k] - prev) * rep[k];
    prev = l.win_[k];
    l.spend_[k] = acc;
  }
  l.validate(true);
  return l;
}

BidLandscape BidLandscape::from_samples(PriceGrid grid,
                                        std::span<const double> samples) {
  if (samples.empty())
    throw std::invalid_argument("landscape needs at least one sample");
  std::vector<long> counts(grid.n_levels, 0);
  for (double s : samples) {
    double c = std::clamp(s, grid.min_price, grid.max_price);
    auto it = std::lower_bound(grid.edges.begin(), grid.edges.end(), c);
    counts[it - grid.edges.begin()] += 1;
  }
  std::vector<double> cdf(grid.n_levels);
  long acc = 0;
  auto total = static_cast<double>(samples.size());
  for (int k = 0; k < grid.n_levels; ++k) {
    acc += counts[k];
    cdf[k] = static_cast<double>(acc) / total;
  }
  return from_cdf(std::move(grid), std::move(cdf));
}

BidLandscape BidLandscape::from_response(PriceGrid grid,
                                         std::vector<double> win,
                                         std::vector<double> spend) {
  BidLandscape l;
  l.grid_ = std::move(grid);
  l.win_ = std::move(win);
  l.spend_ = std::move(spend);
  l.validate(false);
  return l;
}

std::vector<double> BidLandscape::pdf_mass() const {
  std::vector<double> mass(win_.size());
  double prev = 0.0;
  for (std::size_t k = 0; k < win_.size(); ++k) {
    mass[k] = win_[k] - prev;
    prev = win_[k];
  }
  return mass;
}

namespace {
// Largest k with edges[k] <= bid, or -1 when the bid is below the grid.
inline int step_index(const std::vector<double>& edges, double bid) {
  auto it = std::upper_bound(edges.begin(), edges.end(), bid);
  return static_cast<int>(it - edges.begin()) - 1;
}
}  // namespace

double BidLandscape::win_rate_at(double bid) const {
  int k = step_index(grid_.edges, bid);
  return k < 0 ? 0.0 : win_[k];
}

double BidLandscape::spend_rate_at(double bid) const {
  int k = step_index(grid_.edges, bid);
  return k < 0 ? 0.0 : spend_[k];
}

bool BidLandscape::is_distribution() const {
  return !win_.empty() && std::abs(win_.back() - 1.0) <= kDistributionTol;
}

double BidLandscape::mean_price() const {
  if (!is_distribution())
    throw std::logic_error("mean_price requires a distribution landscape");
  return spend_.back() / win_.back();
}

ResponseCurves BidLandscape::make_curves() const {
  ResponseCurves c;
  int n = grid_.n_levels;
  c.x.resize(n + 1);
  c.win.resize(n + 1);
  c.spend.resize(n + 1);
  c.x[0] = 0.0;
  c.win[0] = 0.0;
  c.spend[0] = 0.0;
  for (int k = 0; k < n; ++k) {
    c.x[k + 1] = grid_.edges[k];
    c.win[k + 1] = win_[k];
    c.spend[k + 1] = spend_[k];
  }
  return c;
}

double cdf_at(const BidLandscape& l, double bid) { return l.win_rate_at(bid); }

double expected_volume(const BidLandscape& l, double intensity, double bid) {
  return intensity * l.win_rate_at(bid);
}

double expected_spend(const BidLandscape& l, double intensity, double bid) {
  return intensity * l.spend_rate_at(bid);
}

BidLandscape landscape_from_samples(std::span<const double> winning_bids,
                                    const PriceGrid& grid) {
  return BidLandscape::from_samples(grid, winning_bids);
}

BidLandscape smooth_landscape(const BidLandscape& l, const BidNoise& noise) {
  if (noise.family == NoiseFamily::dirac) return l;
  std::vector<double> q = noise.base_quantiles(kSmoothingQuadrature);
  int n = l.grid().n_levels;
  std::vector<double> win(n), spend(n);
  for (int k = 0; k < n; ++k) {
    double cv = l.grid().edges[k];
    double w = 0.0, s = 0.0;
    for (double qj : q) {
      w += l.win_rate_at(cv * qj);
      s += l.spend_rate_at(cv * qj);
    }
    win[k] = w / kSmoothingQuadrature;
    spend[k] = s / kSmoothingQuadrature;
  }
  return BidLandscape::from_response(l.grid(), std::move(win),
                                     std::move(spend));
}

LandscapeProcess::LandscapeProcess(std::vector<BidLandscape> periods)
    : periods_(std::move(periods)) {
  if (periods_.empty())
    throw std::invalid_argument("landscape process needs >= 1 period");
}

LandscapeProcess::LandscapeProcess(BidLandscape single) {
  periods_.push_back(std::move(single));
}

const BidLandscape& LandscapeProcess::at(int t) const {
  if (periods_.size() == 1) return periods_[0];
  if (t < 0 || t >= static_cast<int>(periods_.size()))
    throw std::out_of_range("landscape process period out of range");
  return periods_[t];
}

void LandscapeProcess::materialize_curves() {
  curves_.clear();
  curves_.reserve(periods_.size());
  for (const auto& l : periods_) curves_.push_back(l.make_curves());
}

const ResponseCurves* LandscapeProcess::curves(int t) const {
  if (curves_.empty()) return nullptr;
  if (periods_.size() == 1) return &curves_[0];
  if (t < 0 || t >= static_cast<int>(curves_.size()))
    throw std::out_of_range("landscape process period out of range");
  return &curves_[t];
}

void LandscapeProcess::save_csv(const std::filesystem::path& p) const {
  const PriceGrid& g = periods_[0].grid();
  std::string out = "grid," + fmt_double(g.min_price) + "," +
                    fmt_double(g.max_price) + "," +
                    std::to_string(g.n_levels) + "\n";
  for (std::size_t t = 0; t < periods_.size(); ++t) {
    const auto& l = periods_[t];
    if (!(l.grid() == g))
      throw std::logic_error("all periods must share one grid");
    if (!l.is_distribution())
      throw std::logic_error("only distribution landscapes are serialized");
    out += std::to_string(t);
    for (double w : l.win_rate()) {
      out += ',';
      out += fmt_double(w);
    }
    out += '\n';
  }
  write_text_file(p, out);
}

LandscapeProcess LandscapeProcess::load_csv(const std::filesystem::path& p) {
  std::istringstream in(read_text_file(p));
  std::string line;
  if (!std::getline(in, line))
    throw std::runtime_error("empty landscape file: " + p.string());
  auto head = split_csv(line);
  if (head.size() != 4 || head[0] != "grid")
    throw std::runtime_error("bad landscape header: " + p.string());
  PriceGrid g = make_price_grid(parse_double(head[1]), parse_double(head[2]),
                                static_cast<int>(parse_long(head[3])));
  std::vector<BidLandscape> periods;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto f = split_csv(line);
    if (static_cast<int>(f.size()) != g.n_levels + 1)
      throw std::runtime_error("bad landscape row width: " + p.string());
    if (parse_long(f[0]) != static_cast<long>(periods.size()))
      throw std::runtime_error("landscape rows out of order: " + p.string());
    std::vector<double> cdf(g.n_levels);
    for (int k = 0; k < g.n_levels; ++k) cdf[k] = parse_double(f[k + 1]);
    periods.push_back(BidLandscape::from_cdf(g, std::move(cdf)));
  }
  return LandscapeProcess(std::move(periods));
}

LandscapeProcess smooth_process(const LandscapeProcess& p,
                                const BidNoise& noise) {
  std::vector<BidLandscape> out;
  out.reserve(p.n_periods());
  for (int t = 0; t < p.n_periods(); ++t)
    out.push_back(smooth_landscape(p.at(t), noise));
  LandscapeProcess sp(std::move(out));
  sp.materialize_curves();
  return sp;
}

}  // namespace bidlab
