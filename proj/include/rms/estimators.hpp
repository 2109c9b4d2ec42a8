#ifndef RMS_ESTIMATORS_HPP
#define RMS_ESTIMATORS_HPP

#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rms/parallel.hpp"
#include "rms/rwre.hpp"

namespace rms {

class EstimatorError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

constexpr double kZ95 = 1.959963984540054;

struct MeanEstimate {
  std::uint64_t count = 0;
  double mean = 0.0;
  double variance = 0.0;  // sample variance of the summands

  double std_error() const;
  double ci_lo() const { return mean - kZ95 * std_error(); }
  double ci_hi() const { return mean + kZ95 * std_error(); }
};

/// Welford accumulator; summands must be pushed in a fixed order for
/// bit-reproducible results.
class RunningMean {
 public:
  void push(double x);
  MeanEstimate estimate() const { return MeanEstimate{count_, mean_, count_ > 1 ? m2_ / (count_ - 1) : 0.0}; }

 private:
  std::uint64_t count_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

bool ci_overlap(const MeanEstimate& a, const MeanEstimate& b);

// ---------------------------------------------------------------------------
// Least-squares fits

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Weighted least squares of y on x; weights default to 1.
LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> w = {});

struct PowerFit {
  double alpha = 0.0;
  double alpha_se = 0.0;
  double log3_alpha = 0.0;  // exponent after dividing out log^3 n
  double log3_alpha_se = 0.0;
};

/// log M = alpha log n + c, weighted by (M / se)^2 when standard errors are
/// given and positive; also the same fit for M / log^3 n.
PowerFit fit_power_law(std::span<const double> n, std::span<const double> m, std::span<const double> se = {});

// ---------------------------------------------------------------------------

struct AnnealedCell {
  int y = 0;
  double target = 0.0;
  MeanEstimate estimate;
  double z = 0.0;
};

struct AnnealedCheck {
  int n = 0;
  std::uint64_t replicates = 0;
  std::vector<AnnealedCell> cells;

  double max_abs_z() const;
};

/// P(S_n = y) for simple random walk.
double binomial_target(int n, int y);

/// Aggregates per-replicate mass rows p(n, .) into z-scores.
class AnnealedAccumulator {
 public:
  explicit AnnealedAccumulator(int n);
  void push(std::span<const double> mass_row);
  AnnealedCheck finish() const;

 private:
  int n_;
  std::vector<RunningMean> cells_;
};

constexpr std::uint64_t kMinAnnealedReplicates = 10000;

/// Requires at least kMinAnnealedReplicates replicates.
AnnealedCheck annealed_mean_check(const EnsembleSpec& ensemble, int n);

// ---------------------------------------------------------------------------

struct MomentPoint {
  int n = 0;
  MeanEstimate squared_mean;  // M(n): mean of m(n)^2
  MeanEstimate weighted_sum;  // B(n)
  MeanEstimate collision_sum; // Z(n)
  bool overlap = false;       // 95% CIs of M and B overlap
};

struct MomentCurve {
  std::uint64_t replicates = 0;
  std::vector<MomentPoint> points;
  PowerFit fit;  // over points with n >= 64
};

/// Per-replicate functionals at each grid horizon from one streamed sweep.
struct SweepSample {
  std::vector<double> mean_displacement;  // m(n)
  std::vector<double> weighted_sum;       // B(n)
  std::vector<double> collision_sum;      // Z(n)
  std::vector<int> zero_count;            // #{i < n : Y_i = 0}
  std::vector<int> excursion_count;       // a(n)
  TransitionTally transitions;            // Y transitions up to the last grid point
};

struct SweepOptions {
  bool moments = true;
  bool coupled = false;
};

SweepSample sweep_replicate(const EnsembleSpec& ensemble, std::uint64_t replicate,
                            std::span<const int> grid, SweepOptions options);

MomentCurve moment_curve(const EnsembleSpec& ensemble, std::span<const int> grid);
MomentCurve moment_curve_from(std::span<const int> grid, std::span<const SweepSample> samples);

// ---------------------------------------------------------------------------

struct ZeroCountPoint {
  int n = 0;
  MeanEstimate zero_count;
  MeanEstimate squared_mean;          // M(n) from the same environments
  MeanEstimate gap;                   // zero_count - m(n)^2, paired
  MeanEstimate excursion_count;       // a(n)
  double excursion_ratio = 0.0;       // mean a(n) / sqrt(n)
  bool ordering_holds = false;        // M(n) <= zero count + 95% margin
};

struct ZeroCountCurve {
  std::uint64_t replicates = 0;
  std::vector<ZeroCountPoint> points;
  TransitionTally transitions;

  /// max/min of mean a(n)/sqrt(n) over the grid, minus one.
  double excursion_ratio_spread() const;
};

ZeroCountCurve zero_count_curve(const EnsembleSpec& ensemble, std::span<const int> grid);
ZeroCountCurve zero_count_curve_from(std::span<const int> grid, std::span<const SweepSample> samples);

// ---------------------------------------------------------------------------

struct TailCurve {
  std::vector<int> thresholds;
  std::vector<std::uint64_t> at_least;  // #{samples >= threshold}
  std::vector<double> survival;
  std::uint64_t samples = 0;
  std::uint64_t censored = 0;  // samples still running at the horizon
};

/// Survival curve of integer samples; censored samples count as > horizon.
TailCurve survival_curve(std::span<const int> values, std::span<const bool> censored,
                         std::span<const int> thresholds);

struct StretchedExpFit {
  double a = 0.0;   // log S(t) ~ a - b sqrt(t)
  double b = 0.0;
  double b_se = 0.0;
  double r2 = 0.0;
  std::size_t points = 0;
};

/// Fit on thresholds in [lo, hi] with nonzero counts, weighted by the count
/// (inverse variance of log S).
StretchedExpFit fit_stretched_exponential(const TailCurve& curve, int lo, int hi);

/// tau_0 = first l >= 0 with v(X_l) >= 2 along one walk; sampling stops at
/// `cap` (returned value cap + 1 with censored = true).
struct Tau0Sample {
  int tau = 0;
  bool censored = false;
};
Tau0Sample tau0_replicate(const EnsembleSpec& ensemble, std::uint64_t replicate, int cap);

/// Survival of tau_0 at thresholds 0..cap+1 over the ensemble.
TailCurve tau0_curve(const EnsembleSpec& ensemble, int cap);

struct HoldingTail {
  int horizon = 0;
  TailCurve tau0;
  TailCurve max_hold;
  StretchedExpFit tau0_fit;
  double median_max_hold_over_log3 = 0.0;
};

/// tau_0 survival (walk X) and max-hold survival of coupled pairs up to n.
/// Throws EstimatorError if every replicate's longest hold is censored.
HoldingTail holding_tail(const EnsembleSpec& ensemble, int n, int fit_lo, int fit_hi);

// ---------------------------------------------------------------------------

/// mu_t = sum_{k >= 1} P(S_t >= 2k), exact.
double mu_t_exact(int t);

/// Standard normal CDF.
double normal_cdf(double x);

/// sup over jump points of |F - Phi|, checking both sides of each jump.
/// `points` strictly increasing, `cdf` nondecreasing ending at 1 +- 1e-9.
double ks_distance(std::span<const double> points, std::span<const double> cdf);

struct CltReport {
  int horizon = 0;
  double sigma2 = 0.0;             // sum_y y^2 p(T,y) / T
  double mean_displacement = 0.0;  // m(T)
  double ks = 0.0;
  double ks_centered = 0.0;        // after centering at m(T) and scaling to unit variance
  double total_mass = 0.0;
  std::vector<double> points;  // y / sqrt(T)
  std::vector<double> cdf;
};

/// Quenched CLT statistics of one environment; throws EstimatorError if the
/// streamed mass drifts from 1 by more than 1e-9.
CltReport clt_report(const EnvSeedSpec& env, bool keep_curve = false);
CltReport clt_report_from_row(int horizon, std::span<const double> mass, bool keep_curve = false);

}  // namespace rms

#endif
