#include <cmath>
#include <vector>

#include "doctest.h"
#include "rms/environment.hpp"
#include "rms/estimators.hpp"
#include "rms/mass_kernel.hpp"
#include "rms/rwre.hpp"

using namespace rms;

TEST_CASE("running mean and confidence intervals") {
  RunningMean acc;
  for (double x : {1.0, 2.0, 3.0, 4.0}) acc.push(x);
  const MeanEstimate e = acc.estimate();
  CHECK(e.count == 4);
  CHECK(e.mean == doctest::Approx(2.5));
  CHECK(e.variance == doctest::Approx(5.0 / 3));
  CHECK(e.std_error() == doctest::Approx(std::sqrt(5.0 / 12)));
  CHECK(e.ci_hi() - e.ci_lo() == doctest::Approx(2 * kZ95 * e.std_error()));

  const MeanEstimate a{100, 1.0, 1.0};
  const MeanEstimate b{100, 1.3, 1.0};
  const MeanEstimate c{100, 2.0, 1.0};
  CHECK(ci_overlap(a, b));
  CHECK_FALSE(ci_overlap(a, c));
}

TEST_CASE("line and power-law fits") {
  const std::vector<double> x{0, 1, 2, 3};
  const std::vector<double> y{1, 3, 5, 7};
  const LineFit f = fit_line(x, y);
  CHECK(f.slope == doctest::Approx(2.0));
  CHECK(f.intercept == doctest::Approx(1.0));
  CHECK(f.r2 == doctest::Approx(1.0));
  CHECK_THROWS_AS(fit_line(std::vector<double>{1}, std::vector<double>{1}), EstimatorError);
  CHECK_THROWS_AS(fit_line(std::vector<double>{1, 1}, std::vector<double>{1, 2}), EstimatorError);

  std::vector<double> n, m;
  for (double k = 64; k <= 4096; k *= 2) {
    n.push_back(k);
    m.push_back(5 * std::sqrt(k));
  }
  const PowerFit p = fit_power_law(n, m);
  CHECK(std::abs(p.alpha - 0.5) < 1e-6);
  CHECK(p.log3_alpha < p.alpha);
}

TEST_CASE("simple random walk law") {
  CHECK(binomial_target(0, 0) == 1.0);
  CHECK(binomial_target(2, 0) == 0.5);
  CHECK(binomial_target(2, 2) == 0.25);
  CHECK(binomial_target(3, 0) == 0.0);
  CHECK(binomial_target(8, 0) == doctest::Approx(70.0 / 256).epsilon(1e-15));
  CHECK(binomial_target(8, 10) == 0.0);
  double total = 0.0;
  for (int y = -40; y <= 40; ++y) total += binomial_target(40, y);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("annealed check requires enough replicates") {
  CHECK_THROWS_AS(annealed_mean_check(EnsembleSpec{1, kMinAnnealedReplicates - 1, 1, Measure::size_biased}, 4),
                  EstimatorError);
  const AnnealedCheck check = annealed_mean_check(EnsembleSpec{21, kMinAnnealedReplicates, 1, Measure::size_biased}, 6);
  CHECK(check.replicates == kMinAnnealedReplicates);
  CHECK(check.cells.size() == 7);
  CHECK(check.max_abs_z() < 4.5);
}

TEST_CASE("m^2 and B agree in mean at n = 16") {
  const std::vector<int> grid{16};
  const MomentCurve curve = moment_curve(EnsembleSpec{22, 20000, 1, Measure::size_biased}, grid);
  REQUIRE(curve.points.size() == 1);
  const MomentPoint& p = curve.points[0];
  CHECK(p.overlap);
  CHECK(p.weighted_sum.mean <= p.collision_sum.mean);
}

TEST_CASE("one step leaves exactly one zero") {
  const std::vector<int> grid{1};
  const SweepSample s = sweep_replicate(EnsembleSpec{23, 1, 1, Measure::size_biased}, 0, grid, {true, true});
  CHECK(s.zero_count[0] == 1);
  CHECK(s.collision_sum[0] == 1.0);
}

TEST_CASE("streamed sweep agrees with stored computations") {
  const EnsembleSpec ens{24, 8, 1, Measure::size_biased};
  const std::vector<int> grid{5, 40, 100};
  for (std::uint64_t r = 0; r < ens.replicates; ++r) {
    const SweepSample s = sweep_replicate(ens, r, grid, {true, true});
    const Environment env = generate_cone(ens.env(r, 100));
    const CoupledPaths pair = sample_coupled(env, 100, walk_key(24, r, 0), walk_key(24, r, 1));
    const auto y = pair.difference();
    for (std::size_t g = 0; g < grid.size(); ++g) {
      const QuenchedMoments q = quenched_moments(env, grid[g]);
      CHECK(s.mean_displacement[g] == doctest::Approx(q.mean_displacement).epsilon(1e-12));
      CHECK(s.weighted_sum[g] == doctest::Approx(q.zero_weighted_sum).epsilon(1e-12));
      CHECK(s.collision_sum[g] == doctest::Approx(q.collision_sum).epsilon(1e-12));
      const std::vector<int> prefix(y.begin(), y.begin() + grid[g] + 1);
      const DifferenceDecomposition d = decompose(prefix, pair.occupancy);
      CHECK(s.zero_count[g] == d.zero_count);
      CHECK(s.excursion_count[g] == d.excursion_count);
    }
    TransitionTally direct;
    direct.add(y, pair.occupancy);
    CHECK(s.transitions.off_zero_total() == direct.off_zero_total());
    CHECK(s.transitions.at_zero.size() == direct.at_zero.size());
  }
  CHECK_THROWS_AS(sweep_replicate(ens, 0, std::vector<int>{4, 4}, {}), EstimatorError);
  CHECK_THROWS_AS(sweep_replicate(ens, 0, std::vector<int>{}, {}), EstimatorError);
}

TEST_CASE("zero-count curve orders moments below zeros") {
  const std::vector<int> grid{16, 64};
  const ZeroCountCurve z = zero_count_curve(EnsembleSpec{25, 400, 1, Measure::size_biased}, grid);
  REQUIRE(z.points.size() == 2);
  for (const ZeroCountPoint& p : z.points) {
    CHECK(p.ordering_holds);
    CHECK(p.zero_count.mean >= p.excursion_count.mean);
  }
  CHECK(z.excursion_ratio_spread() >= 0.0);
}

TEST_CASE("survival curves") {
  const std::vector<int> values{0, 1, 1, 3, 7};
  const bool flags[] = {false, false, false, false, true};
  const std::vector<int> thresholds{0, 1, 2, 4, 8};
  const TailCurve c = survival_curve(values, flags, thresholds);
  CHECK(c.at_least == std::vector<std::uint64_t>{5, 4, 2, 1, 0});
  CHECK(c.survival[1] == doctest::Approx(0.8));
  CHECK(c.censored == 1);
  for (std::size_t i = 1; i < c.survival.size(); ++i) CHECK(c.survival[i] <= c.survival[i - 1]);
  CHECK_THROWS_AS(survival_curve(values, std::span<const bool>(flags, 2), thresholds), EstimatorError);
}

TEST_CASE("stretched exponential fit recovers its parameters") {
  TailCurve c;
  c.samples = 1000000000;
  for (int t = 1; t <= 400; ++t) {
    c.thresholds.push_back(t);
    const double s = std::exp(0.3 - 1.2 * std::sqrt(t));
    c.survival.push_back(s);
    c.at_least.push_back(static_cast<std::uint64_t>(s * 1e9) + 1);
  }
  const StretchedExpFit f = fit_stretched_exponential(c, 25, 400);
  CHECK(f.b == doctest::Approx(1.2).epsilon(1e-9));
  CHECK(f.a == doctest::Approx(0.3).epsilon(1e-9));
  CHECK_THROWS_AS(fit_stretched_exponential(c, 1, 2), EstimatorError);
}

TEST_CASE("tau_0 matches a walk on the stored environment") {
  const EnsembleSpec ens{26, 200, 1, Measure::size_biased};
  constexpr int kCap = 60;
  for (std::uint64_t r = 0; r < ens.replicates; ++r) {
    const Environment env = generate_cone(ens.env(r, kCap + 1));
    const auto ys = sample_walk(env, kCap + 1, walk_key(26, r, 0)).positions();
    int expected = kCap + 1;
    for (int l = 0; l <= kCap; ++l) {
      if (env.occupancy(l, ys[static_cast<std::size_t>(l)]) >= 2) {
        expected = l;
        break;
      }
    }
    const Tau0Sample s = tau0_replicate(ens, r, kCap);
    REQUIRE(s.tau == expected);
    CHECK(s.censored == (expected == kCap + 1));
  }
  const TailCurve c = tau0_curve(ens, kCap);
  CHECK(c.thresholds.size() == kCap + 2);
  CHECK(c.survival[0] == 1.0);
  for (std::size_t i = 1; i < c.survival.size(); ++i) CHECK(c.survival[i] <= c.survival[i - 1]);
}

TEST_CASE("mu_t exact values") {
  CHECK(mu_t_exact(0) == 0.0);
  CHECK(mu_t_exact(1) == 0.0);
  CHECK(mu_t_exact(2) == 0.25);
  CHECK(mu_t_exact(3) == 0.125);
  CHECK(mu_t_exact(4) == 0.375);
  CHECK(mu_t_exact(10) == 0.615234375);
  CHECK(mu_t_exact(100) == doctest::Approx(1.989730934679469).epsilon(1e-13));
  CHECK_THROWS_AS(mu_t_exact(-1), EstimatorError);
}

TEST_CASE("mu_t agrees with path enumeration") {
  for (int t = 1; t <= 12; ++t) {
    double sum = 0.0;
    for (std::uint32_t bits = 0; bits < (1u << t); ++bits) {
      const int s = 2 * std::popcount(bits) - t;
      if (s >= 2) sum += s / 2;  // #{k >= 1 : S_t >= 2k}
    }
    CHECK(mu_t_exact(t) == doctest::Approx(sum / (1u << t)).epsilon(1e-14));
  }
}

TEST_CASE("mu_t / sqrt(t) increases toward its limit") {
  const double limit = 1.0 / (2.0 * std::sqrt(2.0 * M_PI));
  double previous = 0.0;
  for (int t = 16; t <= 4096; t *= 2) {
    const double r = mu_t_exact(t) / std::sqrt(t);
    CHECK(r > previous);
    CHECK(r < limit);
    previous = r;
  }
  CHECK(std::abs(previous - limit) < 1e-3);
}

TEST_CASE("normal cdf") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.0) == doctest::Approx(0.8413447460685429).epsilon(1e-14));
  CHECK(normal_cdf(-1.96) == doctest::Approx(0.024997895148220435).epsilon(1e-12));
}

TEST_CASE("KS distance checks both sides of each jump") {
  CHECK(ks_distance(std::vector<double>{0.0}, std::vector<double>{1.0}) == 0.5);
  const double gap = ks_distance(std::vector<double>{-1.0, 1.0}, std::vector<double>{0.5, 1.0});
  CHECK(gap == doctest::Approx(0.3413447460685429).epsilon(1e-14));

  std::vector<double> pts, cdf;
  for (int i = -4000; i <= 4000; ++i) {
    pts.push_back(i / 500.0);
    cdf.push_back(normal_cdf(i / 500.0));
  }
  cdf.back() = 1.0;
  CHECK(ks_distance(pts, cdf) < 1e-3);

  CHECK_THROWS_AS(ks_distance(std::vector<double>{0, 1}, std::vector<double>{0.6, 0.5}), EstimatorError);
  CHECK_THROWS_AS(ks_distance(std::vector<double>{1, 0}, std::vector<double>{0.5, 1.0}), EstimatorError);
  CHECK_THROWS_AS(ks_distance(std::vector<double>{0, 1}, std::vector<double>{0.2, 0.9}), EstimatorError);
}

TEST_CASE("CLT report") {
  const CltReport point = clt_report_from_row(0, std::vector<double>{1.0});
  CHECK(point.ks == 0.5);
  CHECK(point.sigma2 == 0.0);
  CHECK_THROWS_AS(clt_report_from_row(2, std::vector<double>{0.2, 0.2, 0.2}), EstimatorError);
  CHECK_THROWS_AS(clt_report_from_row(2, std::vector<double>{0.5, 0.5}), EstimatorError);

  std::vector<double> row;
  for (int i = 0; i <= 400; ++i) row.push_back(binomial_target(400, 2 * i - 400));
  const CltReport srw = clt_report_from_row(400, row, true);
  CHECK(srw.sigma2 == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(std::abs(srw.mean_displacement) < 1e-12);
  CHECK(srw.ks < 0.03);
  CHECK(srw.points.size() == 401);

  const CltReport env = clt_report(EnvSeedSpec{27, 2000, Measure::size_biased, 0});
  CHECK(env.total_mass == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(env.sigma2 > 0.5);
  CHECK(env.sigma2 < 1.5);
}

TEST_CASE("CI width shrinks with the square root of the replicate count") {
  const std::vector<int> grid{32};
  const MomentCurve small = moment_curve(EnsembleSpec{28, 1000, 1, Measure::size_biased}, grid);
  const MomentCurve large = moment_curve(EnsembleSpec{28, 4000, 1, Measure::size_biased}, grid);
  const double ratio = large.points[0].weighted_sum.std_error() / small.points[0].weighted_sum.std_error();
  CHECK(ratio == doctest::Approx(0.5).epsilon(0.15));
}

TEST_CASE("results do not depend on the thread count") {
  const std::vector<int> grid{8, 32, 64};
  const MomentCurve one = moment_curve(EnsembleSpec{29, 300, 1, Measure::size_biased}, grid);
  const MomentCurve three = moment_curve(EnsembleSpec{29, 300, 3, Measure::size_biased}, grid);
  for (std::size_t g = 0; g < grid.size(); ++g) {
    CHECK(one.points[g].squared_mean.mean == three.points[g].squared_mean.mean);
    CHECK(one.points[g].weighted_sum.variance == three.points[g].weighted_sum.variance);
  }
  const TransitionTally a = separation_trials(EnsembleSpec{29, 100, 1, Measure::size_biased}, 64);
  const TransitionTally b = separation_trials(EnsembleSpec{29, 100, 3, Measure::size_biased}, 64);
  CHECK(a.off_zero_up == b.off_zero_up);
  CHECK(a.at_zero.at(2).stay == b.at_zero.at(2).stay);
}

TEST_CASE("holding tail reports a censoring error on tiny horizons") {
  CHECK_THROWS_AS(holding_tail(EnsembleSpec{30, 10, 1, Measure::size_biased}, 0, 1, 2), EstimatorError);
  const HoldingTail h = holding_tail(EnsembleSpec{30, 2000, 1, Measure::size_biased}, 200, 2, 40);
  CHECK(h.tau0.samples == 2000);
  CHECK(h.max_hold.samples == 2000);
  CHECK(h.tau0_fit.b > 0);
}
