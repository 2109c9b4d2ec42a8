#include "rms/estimators.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <string>

#include "rms/mass_kernel.hpp"

namespace rms {

double MeanEstimate::std_error() const {
  return count > 0 ? std::sqrt(variance / static_cast<double>(count)) : 0.0;
}

void RunningMean::push(double x) {
  ++count_;
  const double delta = x - mean_;
  mean_ += delta / static_cast<double>(count_);
  m2_ += delta * (x - mean_);
}

bool ci_overlap(const MeanEstimate& a, const MeanEstimate& b) {
  return a.ci_lo() <= b.ci_hi() && b.ci_lo() <= a.ci_hi();
}

// ---------------------------------------------------------------------------

LineFit fit_line(std::span<const double> x, std::span<const double> y, std::span<const double> w) {
  if (x.size() != y.size() || (!w.empty() && w.size() != x.size())) {
    throw EstimatorError("fit_line: mismatched input lengths");
  }
  const std::size_t k = x.size();
  if (k < 2) throw EstimatorError("fit_line: need at least two points");
  auto weight = [&](std::size_t i) { return w.empty() ? 1.0 : w[i]; };
  double sw = 0, sx = 0, sy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sw += weight(i);
    sx += weight(i) * x[i];
    sy += weight(i) * y[i];
  }
  const double xbar = sx / sw;
  const double ybar = sy / sw;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < k; ++i) {
    sxx += weight(i) * (x[i] - xbar) * (x[i] - xbar);
    sxy += weight(i) * (x[i] - xbar) * (y[i] - ybar);
    syy += weight(i) * (y[i] - ybar) * (y[i] - ybar);
  }
  if (sxx <= 0) throw EstimatorError("fit_line: degenerate abscissae");
  LineFit fit;
  fit.points = k;
  fit.slope = sxy / sxx;
  fit.intercept = ybar - fit.slope * xbar;
  double rss = 0;
  for (std::size_t i = 0; i < k; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += weight(i) * r * r;
  }
  fit.r2 = syy > 0 ? 1.0 - rss / syy : 1.0;
  // Weighted fit with the residual scale estimated from the data.
  fit.slope_se = k > 2 ? std::sqrt(rss / static_cast<double>(k - 2) / sxx) : 0.0;
  return fit;
}

PowerFit fit_power_law(std::span<const double> n, std::span<const double> m, std::span<const double> se) {
  std::vector<double> x, y, ylog3, w;
  for (std::size_t i = 0; i < n.size(); ++i) {
    if (!(m[i] > 0) || n[i] < 3) throw EstimatorError("fit_power_law: needs n >= 3 and positive values");
    x.push_back(std::log(n[i]));
    y.push_back(std::log(m[i]));
    ylog3.push_back(std::log(m[i]) - 3.0 * std::log(std::log(n[i])));
    if (!se.empty() && se[i] > 0) w.push_back((m[i] / se[i]) * (m[i] / se[i]));
  }
  if (w.size() != x.size()) w.clear();
  const LineFit plain = fit_line(x, y, w);
  const LineFit corrected = fit_line(x, ylog3, w);
  return PowerFit{plain.slope, plain.slope_se, corrected.slope, corrected.slope_se};
}

// ---------------------------------------------------------------------------

double AnnealedCheck::max_abs_z() const {
  double z = 0;
  for (const auto& c : cells) z = std::max(z, std::abs(c.z));
  return z;
}

double binomial_target(int n, int y) {
  if (n < 0 || ((n + y) & 1) != 0 || y < -n || y > n) return 0.0;
  const int j = (n + y) / 2;
  if (n <= 62) {
    // Exact binomial coefficient; the result is then exact up to one rounding.
    unsigned __int128 c = 1;
    for (int k = 1; k <= j; ++k) c = c * static_cast<unsigned>(n - k + 1) / static_cast<unsigned>(k);
    return std::ldexp(static_cast<double>(c), -n);
  }
  return std::exp(std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) - n * std::log(2.0));
}

AnnealedAccumulator::AnnealedAccumulator(int n) : n_(n), cells_(static_cast<std::size_t>(n) + 1) {
  if (n < 0) throw EstimatorError("annealed check needs n >= 0");
}

void AnnealedAccumulator::push(std::span<const double> mass_row) {
  if (mass_row.size() != cells_.size()) throw EstimatorError("mass row has the wrong length");
  for (std::size_t i = 0; i < cells_.size(); ++i) cells_[i].push(mass_row[i]);
}

AnnealedCheck AnnealedAccumulator::finish() const {
  AnnealedCheck out;
  out.n = n_;
  out.replicates = cells_.front().estimate().count;
  if (out.replicates < 2) throw EstimatorError("insufficient replicates for an annealed check");
  for (std::size_t i = 0; i < cells_.size(); ++i) {
    AnnealedCell c;
    c.y = 2 * static_cast<int>(i) - n_;
    c.target = binomial_target(n_, c.y);
    c.estimate = cells_[i].estimate();
    const double se = c.estimate.std_error();
    if (n_ > 0 && !(se > 0)) {
      throw EstimatorError("insufficient replicates: degenerate CI at y=" + std::to_string(c.y));
    }
    c.z = se > 0 ? (c.estimate.mean - c.target) / se : 0.0;
    out.cells.push_back(c);
  }
  return out;
}

AnnealedCheck annealed_mean_check(const EnsembleSpec& ensemble, int n) {
  if (ensemble.replicates < kMinAnnealedReplicates) {
    throw EstimatorError("insufficient replicates: annealed check needs at least " +
                         std::to_string(kMinAnnealedReplicates));
  }
  AnnealedAccumulator acc(n);
  run_ordered<std::vector<double>>(
      ensemble.replicates, ensemble.threads,
      [&](std::uint64_t r) {
        ConeStream env(ensemble.env(r, n), Sublattice::walk);
        MassSweep sweep;
        for (int t = 0; t < n; ++t) {
          if (t > 0) env.advance();
          sweep.step(env.walk_row());
        }
        return std::vector<double>(sweep.mass().begin(), sweep.mass().end());
      },
      [&](std::uint64_t, std::vector<double>&& row) { acc.push(row); });
  return acc.finish();
}

// ---------------------------------------------------------------------------

namespace {

void check_grid(std::span<const int> grid) {
  if (grid.empty()) throw EstimatorError("empty n grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 1) throw EstimatorError("grid values must be >= 1");
    if (i > 0 && grid[i] <= grid[i - 1]) throw EstimatorError("grid must be strictly increasing");
  }
}

}  // namespace

SweepSample sweep_replicate(const EnsembleSpec& ensemble, std::uint64_t replicate, std::span<const int> grid,
                            SweepOptions options) {
  check_grid(grid);
  const int horizon = grid.back();
  SweepSample out;
  const std::size_t g = grid.size();
  if (options.moments) {
    out.mean_displacement.resize(g);
    out.weighted_sum.resize(g);
    out.collision_sum.resize(g);
  }
  if (options.coupled) {
    out.zero_count.resize(g);
    out.excursion_count.resize(g);
  }

  ConeStream env(ensemble.env(replicate, horizon), Sublattice::walk);
  MassSweep sweep;
  CoupledStepper pair(walk_key(ensemble.seed, replicate, 0), walk_key(ensemble.seed, replicate, 1));
  int zeros = 0;
  int excursions = 0;
  std::size_t next = 0;
  auto record = [&](int t) {
    while (next < g && grid[next] == t) {
      if (options.moments) {
        const QuenchedMoments m = sweep.moments();
        out.mean_displacement[next] = m.mean_displacement;
        out.weighted_sum[next] = m.zero_weighted_sum;
        out.collision_sum[next] = m.collision_sum;
      }
      if (options.coupled) {
        out.zero_count[next] = zeros;
        out.excursion_count[next] = excursions;
      }
      ++next;
    }
  };
  for (int t = 0; t < horizon; ++t) {
    record(t);
    if (t > 0) env.advance();
    const auto row = env.walk_row();
    if (options.moments) sweep.step(row);
    if (options.coupled) {
      const int y = pair.difference();
      const std::uint32_t v = pair.occupancy_at_first(row);
      zeros += y == 0;
      pair.step(row);
      out.transitions.record(y, pair.difference(), v);
      if (y == 0 && pair.difference() != 0) ++excursions;
    }
  }
  record(horizon);
  return out;
}

MomentCurve moment_curve_from(std::span<const int> grid, std::span<const SweepSample> samples) {
  check_grid(grid);
  const std::size_t g = grid.size();
  std::vector<RunningMean> squared(g), weighted(g), collision(g);
  for (const SweepSample& s : samples) {
    for (std::size_t i = 0; i < g; ++i) {
      squared[i].push(s.mean_displacement[i] * s.mean_displacement[i]);
      weighted[i].push(s.weighted_sum[i]);
      collision[i].push(s.collision_sum[i]);
    }
  }
  MomentCurve curve;
  curve.replicates = samples.size();
  std::vector<double> ns, ms, ses;
  for (std::size_t i = 0; i < g; ++i) {
    MomentPoint p;
    p.n = grid[i];
    p.squared_mean = squared[i].estimate();
    p.weighted_sum = weighted[i].estimate();
    p.collision_sum = collision[i].estimate();
    p.overlap = ci_overlap(p.squared_mean, p.weighted_sum);
    curve.points.push_back(p);
    if (p.n >= 64) {
      ns.push_back(p.n);
      ms.push_back(p.squared_mean.mean);
      ses.push_back(p.squared_mean.std_error());
    }
  }
  if (ns.size() >= 2) {
    curve.fit = fit_power_law(ns, ms, ses);
  } else {
    curve.fit.alpha = curve.fit.log3_alpha = std::numeric_limits<double>::quiet_NaN();
  }
  return curve;
}

namespace {

std::vector<SweepSample> run_sweeps(const EnsembleSpec& ensemble, std::span<const int> grid, SweepOptions options) {
  check_grid(grid);
  std::vector<SweepSample> samples;
  samples.reserve(ensemble.replicates);
  run_ordered<SweepSample>(
      ensemble.replicates, ensemble.threads,
      [&](std::uint64_t r) { return sweep_replicate(ensemble, r, grid, options); },
      [&](std::uint64_t, SweepSample&& s) { samples.push_back(std::move(s)); });
  return samples;
}

}  // namespace

MomentCurve moment_curve(const EnsembleSpec& ensemble, std::span<const int> grid) {
  const auto samples = run_sweeps(ensemble, grid, SweepOptions{true, false});
  return moment_curve_from(grid, samples);
}

// ---------------------------------------------------------------------------

double ZeroCountCurve::excursion_ratio_spread() const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = 0.0;
  for (const auto& p : points) {
    lo = std::min(lo, p.excursion_ratio);
    hi = std::max(hi, p.excursion_ratio);
  }
  return lo > 0 ? hi / lo - 1.0 : std::numeric_limits<double>::infinity();
}

ZeroCountCurve zero_count_curve_from(std::span<const int> grid, std::span<const SweepSample> samples) {
  check_grid(grid);
  const std::size_t g = grid.size();
  std::vector<RunningMean> zeros(g), squared(g), gap(g), excursions(g);
  ZeroCountCurve curve;
  for (const SweepSample& s : samples) {
    curve.transitions.merge(s.transitions);
    for (std::size_t i = 0; i < g; ++i) {
      const double m2 = s.mean_displacement[i] * s.mean_displacement[i];
      zeros[i].push(s.zero_count[i]);
      squared[i].push(m2);
      gap[i].push(s.zero_count[i] - m2);
      excursions[i].push(s.excursion_count[i]);
    }
  }
  curve.replicates = samples.size();
  for (std::size_t i = 0; i < g; ++i) {
    ZeroCountPoint p;
    p.n = grid[i];
    p.zero_count = zeros[i].estimate();
    p.squared_mean = squared[i].estimate();
    p.gap = gap[i].estimate();
    p.excursion_count = excursions[i].estimate();
    p.excursion_ratio = p.excursion_count.mean / std::sqrt(static_cast<double>(p.n));
    // Paired difference over the same environments: the joint 95% margin.
    p.ordering_holds = p.gap.mean >= -kZ95 * p.gap.std_error();
    curve.points.push_back(p);
  }
  return curve;
}

ZeroCountCurve zero_count_curve(const EnsembleSpec& ensemble, std::span<const int> grid) {
  const auto samples = run_sweeps(ensemble, grid, SweepOptions{true, true});
  return zero_count_curve_from(grid, samples);
}

// ---------------------------------------------------------------------------

TailCurve survival_curve(std::span<const int> values, std::span<const bool> censored,
                         std::span<const int> thresholds) {
  if (!censored.empty() && censored.size() != values.size()) throw EstimatorError("censoring flags mismatch");
  TailCurve c;
  c.thresholds.assign(thresholds.begin(), thresholds.end());
  c.samples = values.size();
  for (std::size_t i = 0; i < censored.size(); ++i) c.censored += censored[i];
  std::vector<int> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  for (int t : thresholds) {
    const auto count = static_cast<std::uint64_t>(sorted.end() - std::lower_bound(sorted.begin(), sorted.end(), t));
    c.at_least.push_back(count);
    c.survival.push_back(c.samples > 0 ? static_cast<double>(count) / static_cast<double>(c.samples) : 0.0);
  }
  return c;
}

StretchedExpFit fit_stretched_exponential(const TailCurve& curve, int lo, int hi) {
  std::vector<double> x, y, w;
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) {
    const int t = curve.thresholds[i];
    if (t < lo || t > hi || curve.at_least[i] == 0) continue;
    x.push_back(std::sqrt(static_cast<double>(t)));
    y.push_back(std::log(curve.survival[i]));
    w.push_back(static_cast<double>(curve.at_least[i]));
  }
  if (x.size() < 3) throw EstimatorError("too few nonzero tail points to fit");
  const LineFit f = fit_line(x, y, w);
  return StretchedExpFit{f.intercept, -f.slope, f.slope_se, f.r2, f.points};
}

Tau0Sample tau0_replicate(const EnsembleSpec& ensemble, std::uint64_t replicate, int cap) {
  ConeStream env(ensemble.env(replicate, cap + 1), Sublattice::walk);
  Xoshiro256pp rng(walk_key(ensemble.seed, replicate, 0));
  int index = 0;
  for (int l = 0; l <= cap; ++l) {
    if (l > 0) env.advance();
    const Cell c = env.walk_row()[static_cast<std::size_t>(index)];
    if (c.occupancy() >= 2) return Tau0Sample{l, false};
    if (walk_step(c, rng.uniform()) > 0) ++index;
  }
  return Tau0Sample{cap + 1, true};
}

TailCurve tau0_curve(const EnsembleSpec& ensemble, int cap) {
  std::vector<int> taus;
  std::vector<char> flags;
  run_ordered<Tau0Sample>(
      ensemble.replicates, ensemble.threads, [&](std::uint64_t r) { return tau0_replicate(ensemble, r, cap); },
      [&](std::uint64_t, Tau0Sample&& s) {
        taus.push_back(s.tau);
        flags.push_back(s.censored);
      },
      4096);
  std::vector<int> thresholds(static_cast<std::size_t>(cap) + 2);
  std::iota(thresholds.begin(), thresholds.end(), 0);
  std::unique_ptr<bool[]> censored(new bool[flags.size()]);
  for (std::size_t i = 0; i < flags.size(); ++i) censored[i] = flags[i] != 0;
  return survival_curve(taus, std::span<const bool>(censored.get(), flags.size()), thresholds);
}

HoldingTail holding_tail(const EnsembleSpec& ensemble, int n, int fit_lo, int fit_hi) {
  if (n < 1) throw EstimatorError("holding tail needs n >= 1");
  struct Sample {
    int tau = 0;
    bool tau_censored = false;
    int max_hold = 0;
    bool hold_censored = false;
  };
  std::vector<Sample> samples;
  run_ordered<Sample>(
      ensemble.replicates, ensemble.threads,
      [&](std::uint64_t r) {
        ConeStream env(ensemble.env(r, n), Sublattice::walk);
        CoupledStepper pair(walk_key(ensemble.seed, r, 0), walk_key(ensemble.seed, r, 1));
        std::vector<int> y(static_cast<std::size_t>(n) + 1, 0);
        std::vector<std::uint32_t> v(static_cast<std::size_t>(n));
        for (int k = 0; k < n; ++k) {
          if (k > 0) env.advance();
          v[static_cast<std::size_t>(k)] = pair.occupancy_at_first(env.walk_row());
          pair.step(env.walk_row());
          y[static_cast<std::size_t>(k) + 1] = pair.difference();
        }
        Sample s;
        const auto first = std::find_if(v.begin(), v.end(), [](std::uint32_t x) { return x >= 2; });
        s.tau = static_cast<int>(first - v.begin());
        s.tau_censored = first == v.end();
        const DifferenceDecomposition d = decompose(y, v);
        for (const Hold& h : d.holds) {
          if (h.length >= s.max_hold) {
            s.max_hold = h.length;
            s.hold_censored = h.censored;
          }
        }
        return s;
      },
      [&](std::uint64_t, Sample&& s) { samples.push_back(s); });

  if (std::all_of(samples.begin(), samples.end(), [](const Sample& s) { return s.hold_censored; })) {
    throw EstimatorError("all holds censored: horizon too small");
  }
  std::vector<int> taus, holds;
  std::unique_ptr<bool[]> tau_c(new bool[samples.size()]);
  std::unique_ptr<bool[]> hold_c(new bool[samples.size()]);
  std::vector<double> ratios;
  const double log3 = std::pow(std::log(static_cast<double>(n)), 3);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    taus.push_back(samples[i].tau);
    holds.push_back(samples[i].max_hold);
    tau_c[i] = samples[i].tau_censored;
    hold_c[i] = samples[i].hold_censored;
    ratios.push_back(samples[i].max_hold / log3);
  }
  std::vector<int> thresholds(static_cast<std::size_t>(n) + 1);
  std::iota(thresholds.begin(), thresholds.end(), 0);

  HoldingTail out;
  out.horizon = n;
  out.tau0 = survival_curve(taus, std::span<const bool>(tau_c.get(), samples.size()), thresholds);
  out.max_hold = survival_curve(holds, std::span<const bool>(hold_c.get(), samples.size()), thresholds);
  try {
    out.tau0_fit = fit_stretched_exponential(out.tau0, fit_lo, std::min(fit_hi, n));
  } catch (const EstimatorError&) {
    out.tau0_fit = StretchedExpFit{};
  }
  if (!ratios.empty()) {
    auto mid = ratios.begin() + static_cast<std::ptrdiff_t>(ratios.size() / 2);
    std::nth_element(ratios.begin(), mid, ratios.end());
    out.median_max_hold_over_log3 = *mid;
  }
  return out;
}

// ---------------------------------------------------------------------------

double mu_t_exact(int t) {
  if (t < 0) throw EstimatorError("mu_t needs t >= 0");
  // pmf[j] = P(S_t = 2j - t); tail[j] = P(S_t >= 2j - t).
  std::vector<double> tail(static_cast<std::size_t>(t) + 2, 0.0);
  for (int j = t; j >= 0; --j) {
    tail[static_cast<std::size_t>(j)] = tail[static_cast<std::size_t>(j) + 1] + binomial_target(t, 2 * j - t);
  }
  double mu = 0.0;
  for (int k = 1; 2 * k <= t; ++k) {
    const int j = (t + 2 * k + 1) / 2;  // smallest j with 2j - t >= 2k
    mu += tail[static_cast<std::size_t>(j)];
  }
  return mu;
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

double ks_distance(std::span<const double> points, std::span<const double> cdf) {
  if (points.size() != cdf.size() || points.empty()) throw EstimatorError("ks_distance: bad input sizes");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (i > 0 && !(points[i] > points[i - 1])) throw EstimatorError("ks_distance: support not increasing");
    if (cdf[i] < (i > 0 ? cdf[i - 1] : 0.0) || cdf[i] < 0.0) throw EstimatorError("ks_distance: non-monotone CDF");
  }
  if (std::abs(cdf.back() - 1.0) > 1e-9) throw EstimatorError("ks_distance: CDF does not reach 1");
  double d = 0.0;
  for (std::size_t i = 0; i < points.size(); ++i) {
    const double phi = normal_cdf(points[i]);
    const double left = i > 0 ? cdf[i - 1] : 0.0;
    d = std::max({d, std::abs(cdf[i] - phi), std::abs(left - phi)});
  }
  return d;
}

CltReport clt_report_from_row(int horizon, std::span<const double> mass, bool keep_curve) {
  if (mass.size() != static_cast<std::size_t>(horizon) + 1) throw EstimatorError("mass row does not match horizon");
  CltReport r;
  r.horizon = horizon;
  CompensatedSum total, first, second;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    const double y = 2.0 * static_cast<double>(i) - horizon;
    total.add(mass[i]);
    first.add(y * mass[i]);
    second.add(y * y * mass[i]);
  }
  r.total_mass = total.value();
  if (std::abs(r.total_mass - 1.0) > 1e-9) {
    throw EstimatorError("conservation violated upstream: total mass " + std::to_string(r.total_mass));
  }
  r.mean_displacement = first.value();
  r.sigma2 = horizon > 0 ? second.value() / horizon : 0.0;

  const double scale = horizon > 0 ? 1.0 / std::sqrt(static_cast<double>(horizon)) : 1.0;
  std::vector<double> points, cdf;
  CompensatedSum running;
  for (std::size_t i = 0; i < mass.size(); ++i) {
    running.add(mass[i]);
    points.push_back((2.0 * static_cast<double>(i) - horizon) * scale);
    cdf.push_back(running.value());
  }
  cdf.back() = std::min(1.0 + 1e-12, cdf.back());
  r.ks = ks_distance(points, cdf);
  const double spread = std::sqrt(std::max(0.0, second.value() - r.mean_displacement * r.mean_displacement));
  if (spread > 0) {
    std::vector<double> centered(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) {
      centered[i] = (2.0 * static_cast<double>(i) - horizon - r.mean_displacement) / spread;
    }
    r.ks_centered = ks_distance(centered, cdf);
  } else {
    r.ks_centered = r.ks;
  }
  if (keep_curve) {
    r.points = std::move(points);
    r.cdf = std::move(cdf);
  }
  return r;
}

CltReport clt_report(const EnvSeedSpec& spec, bool keep_curve) {
  ConeStream env(EnvSeedSpec{spec.seed, spec.horizon, spec.measure, spec.replicate}, Sublattice::walk);
  MassSweep sweep;
  for (int t = 0; t < spec.horizon; ++t) {
    if (t > 0) env.advance();
    sweep.step(env.walk_row());
  }
  return clt_report_from_row(spec.horizon, sweep.mass(), keep_curve);
}

}  // namespace rms
