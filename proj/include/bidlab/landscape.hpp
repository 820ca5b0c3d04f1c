#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <vector>

namespace bidlab {

// Geometric ladder of bid levels. edges[k] = min * (max/min)^(k/(n-1)),
// so edges.front() == min_price and edges.back() == max_price exactly.
struct PriceGrid {
  double min_price = 0.01;
  double max_price = 100.0;
  int n_levels = 100;
  std::vector<double> edges;

  bool operator==(const PriceGrid& o) const {
    return min_price == o.min_price && max_price == o.max_price &&
           n_levels == o.n_levels;
  }
};

PriceGrid make_price_grid(double min_price, double max_price, int n_levels);
PriceGrid default_price_grid();  // 100 levels, $0.01 .. $100

enum class NoiseFamily { dirac, gamma, lognormal };

// Multiplicative bid randomization: the submitted bid is cv * q where q has
// mean 1. `shape` is the gamma shape k or the lognormal log-sd.
struct BidNoise {
  NoiseFamily family = NoiseFamily::dirac;
  double shape = 0.0;

  static BidNoise dirac() { return {NoiseFamily::dirac, 0.0}; }
  static BidNoise gamma_k(double k) { return {NoiseFamily::gamma, k}; }
  static BidNoise lognormal_s(double s) { return {NoiseFamily::lognormal, s}; }

  // Mean-1 quantiles at midpoint probabilities, sorted ascending.
  std::vector<double> base_quantiles(int m) const;
  double sample(double mean, class Rng& rng) const;
};

// Piecewise-linear view of a response column, pinned at (0, 0) and constant
// beyond the top edge. x has one more entry than the grid.
struct ResponseCurves {
  std::vector<double> x;
  std::vector<double> win;
  std::vector<double> spend;
};

// Distribution of the winning bid over one period, discretized onto a price
// grid, together with the cumulative expected payment.
//
//   win_rate[k]   = P(winning bid <= edges[k])       (win probability when
//                    bidding edges[k])
//   spend_rate[k] = E[price * 1{winning bid <= edges[k]}]
//                    (expected payment per impression when bidding edges[k])
//
// Mass at or below min_price is carried at exactly min_price; mass in bin
// (edges[k-1], edges[k]] is carried at the geometric midpoint of the bin.
// Point evaluation is a right-continuous step: a bid strictly below
// min_price wins nothing, a bid at or above a level collects that level.
class BidLandscape {
 public:
  BidLandscape() = default;

  // cdf[k] = P(winning bid <= edges[k]); cdf.back() must be 1. Spend rates
  // are derived from the bin representative prices.
  static BidLandscape from_cdf(PriceGrid grid, std::vector<double> cdf);

  // Empirical landscape; samples are clamped into [min_price, max_price].
  static BidLandscape from_samples(PriceGrid grid,
                                   std::span<const double> samples);

  // Direct response columns (used for smoothed curves, whose win rate may
  // stay below 1 at the top edge).
  static BidLandscape from_response(PriceGrid grid, std::vector<double> win,
                                    std::vector<double> spend);

  const PriceGrid& grid() const { return grid_; }
  const std::vector<double>& win_rate() const { return win_; }
  const std::vector<double>& spend_rate() const { return spend_; }
  std::vector<double> pdf_mass() const;
  std::vector<double> bin_prices() const;

  double win_rate_at(double bid) const;
  double spend_rate_at(double bid) const;

  // True when the top of the win-rate column reaches 1 (a full probability
  // distribution rather than a smoothed response).
  bool is_distribution() const;

  // Mean winning price implied by the columns (price paid when always
  // winning). Requires a distribution landscape.
  double mean_price() const;

  ResponseCurves make_curves() const;

 private:
  void validate(bool require_distribution) const;

  PriceGrid grid_;
  std::vector<double> win_;
  std::vector<double> spend_;
};

double cdf_at(const BidLandscape& l, double bid);
double expected_volume(const BidLandscape& l, double intensity, double bid);
double expected_spend(const BidLandscape& l, double intensity, double bid);

BidLandscape landscape_from_samples(std::span<const double> winning_bids,
                                    const PriceGrid& grid);

// Win/spend response against randomized bids with mean equal to the control
// level, on the same grid: win'[k] = E_q[win_rate_at(edges[k] * q)]. The
// expectation uses 512 midpoint quantiles of the noise. Dirac noise returns
// the input unchanged.
BidLandscape smooth_landscape(const BidLandscape& l, const BidNoise& noise);

// One landscape per period. A single-entry process broadcasts to any t.
class LandscapeProcess {
 public:
  LandscapeProcess() = default;
  explicit LandscapeProcess(std::vector<BidLandscape> periods);
  explicit LandscapeProcess(BidLandscape single);

  int n_periods() const { return static_cast<int>(periods_.size()); }
  bool broadcast() const { return periods_.size() == 1; }
  const BidLandscape& at(int t) const;

  // Pre-computes piecewise-linear response curves for every period (needed
  // by gradient training).
  void materialize_curves();
  const ResponseCurves* curves(int t) const;

  void save_csv(const std::filesystem::path& p) const;
  static LandscapeProcess load_csv(const std::filesystem::path& p);

 private:
  std::vector<BidLandscape> periods_;
  std::vector<ResponseCurves> curves_;
};

LandscapeProcess smooth_process(const LandscapeProcess& p,
                                const BidNoise& noise);

}  // namespace bidlab
