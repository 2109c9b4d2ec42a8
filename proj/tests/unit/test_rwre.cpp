#include <algorithm>
#include <cmath>
#include <vector>

#include "doctest.h"
#include "rms/environment.hpp"
#include "rms/mass_kernel.hpp"
#include "rms/rwre.hpp"

using namespace rms;

namespace {

double z_score(std::uint64_t hits, std::uint64_t total, double p) {
  const double n = static_cast<double>(total);
  return (static_cast<double>(hits) - n * p) / std::sqrt(n * p * (1 - p));
}

}  // namespace

TEST_CASE("walk_step follows the crossing fractions") {
  CHECK(walk_step(Cell{1, 0}, 0.999) == 1);
  CHECK(walk_step(Cell{0, 1}, 0.0) == -1);
  CHECK(walk_step(Cell{1, 1}, 0.49) == 1);
  CHECK(walk_step(Cell{1, 1}, 0.5) == -1);
  CHECK(walk_step(Cell{2, 1}, 0.66) == 1);
  CHECK(walk_step(Cell{2, 1}, 0.67) == -1);
  CHECK_THROWS_AS(walk_step(Cell{0, 0}, 0.3), WalkError);

  Environment env = Environment::light_cone(2, 0, Measure::size_biased);
  env.set(0, 0, 1, 1);
  CHECK(walk_step(env, SpaceTime{0, 0}, 0.1) == SpaceTime{1, 1});
  CHECK(walk_step(env, SpaceTime{0, 0}, 0.9) == SpaceTime{1, -1});
  CHECK_THROWS_AS(walk_step(env, SpaceTime{1, 1}, 0.1), WalkError);
}

TEST_CASE("sampled walks stay in the cone and are reproducible") {
  const Environment env = generate_cone(EnvSeedSpec{11, 64, Measure::size_biased, 0});
  CHECK(sample_walk(env, 0, 5).positions() == std::vector<int>{0});
  for (std::uint64_t w = 0; w < 50; ++w) {
    const WalkPath path = sample_walk(env, 64, walk_key(11, 0, w));
    const auto ys = path.positions();
    REQUIRE(ys.size() == 65);
    for (int k = 0; k <= 64; ++k) {
      REQUIRE(std::abs(ys[static_cast<std::size_t>(k)]) <= k);
      REQUIRE((ys[static_cast<std::size_t>(k)] + k) % 2 == 0);
    }
    CHECK(sample_walk(env, 64, walk_key(11, 0, w)).steps == path.steps);
  }
  CHECK_THROWS_AS(sample_walk(env, 65, 1), WalkError);
}

TEST_CASE("empirical walk law matches the mass field") {
  const Environment env = generate_cone(EnvSeedSpec{12, 12, Measure::size_biased, 0});
  const MassField field = mass_run(env, 12);
  std::vector<double> counts(25, 0.0);
  constexpr int kWalks = 100000;
  for (int w = 0; w < kWalks; ++w) {
    const auto ys = sample_walk(env, 12, walk_key(12, 0, static_cast<std::uint64_t>(w))).positions();
    counts[static_cast<std::size_t>(ys.back() + 12)] += 1.0;
  }
  double tv = 0.0;
  for (int y = -12; y <= 12; ++y) tv += std::abs(counts[static_cast<std::size_t>(y + 12)] / kWalks - field.row(12).at(y));
  CHECK(tv / 2 < 0.01);
}

TEST_CASE("single-walker corridor forces the coupled pair together") {
  Environment env = Environment::light_cone(30, 0, Measure::size_biased);
  for (int t = 0; t < 30; ++t) {
    for (int y = -t; y <= t; ++y) env.set(t, y, (t % 3 == 0) ? 0u : 1u, (t % 3 == 0) ? 1u : 0u);
  }
  for (std::uint64_t r = 0; r < 10; ++r) {
    const CoupledPaths pair = sample_coupled(env, 30, walk_key(1, r, 0), walk_key(1, r, 1));
    for (int y : pair.difference()) REQUIRE(y == 0);
    for (std::uint32_t v : pair.occupancy) REQUIRE(v == 1);
  }
}

TEST_CASE("coupled first walk equals a single walk on the same key") {
  const Environment env = generate_cone(EnvSeedSpec{13, 100, Measure::size_biased, 0});
  for (std::uint64_t r = 0; r < 20; ++r) {
    const CoupledPaths pair = sample_coupled(env, 100, walk_key(13, r, 0), walk_key(13, r, 1));
    CHECK(pair.first.steps == sample_walk(env, 100, walk_key(13, r, 0)).steps);
    CHECK(pair.second.steps == sample_walk(env, 100, walk_key(13, r, 1)).steps);
  }
}

TEST_CASE("streamed stepper matches the stored environment") {
  const EnvSeedSpec spec{14, 200, Measure::size_biased, 3};
  const Environment env = generate_cone(spec);
  const CoupledPaths pair = sample_coupled(env, 200, walk_key(14, 3, 0), walk_key(14, 3, 1));
  const auto y = pair.difference();
  ConeStream stream(spec, Sublattice::walk);
  CoupledStepper stepper(walk_key(14, 3, 0), walk_key(14, 3, 1));
  for (int k = 0; k < 200; ++k) {
    if (k > 0) stream.advance();
    REQUIRE(stepper.occupancy_at_first(stream.walk_row()) == pair.occupancy[static_cast<std::size_t>(k)]);
    stepper.step(stream.walk_row());
    REQUIRE(stepper.difference() == y[static_cast<std::size_t>(k) + 1]);
  }
  std::vector<Cell> wrong(3);
  CHECK_THROWS_AS(stepper.step(wrong), WalkError);
}

TEST_CASE("decompose splits holds and excursions") {
  const std::vector<int> y{0, 0, 2, 2, 0, 0, 0, -2};
  const std::vector<std::uint32_t> v{1, 2, 3, 4, 5, 6, 7};
  const DifferenceDecomposition d = decompose(y, v);
  CHECK(d.horizon == 7);
  CHECK(d.zero_count == 5);
  CHECK(d.excursion_count == 2);
  REQUIRE(d.holds.size() == 2);
  CHECK(d.holds[0].start == 0);
  CHECK(d.holds[0].length == 1);
  CHECK(d.holds[0].meeting_occupancy == std::vector<std::uint32_t>{1, 2});
  CHECK(d.holds[1].start == 4);
  CHECK(d.holds[1].length == 2);
  CHECK_FALSE(d.holds[1].censored);
  REQUIRE(d.excursions.size() == 2);
  CHECK(d.excursions[0].start == 2);
  CHECK(d.excursions[0].end == 4);
  CHECK(d.excursions[0].length() == 2);
  CHECK(d.excursions[1].start == 7);
  CHECK(d.excursions[1].censored);
  CHECK(d.max_hold() == 2);
  CHECK(d.hold_sum() == 3);
  CHECK(d.satisfies_sum_bound());
  CHECK(d.satisfies_product_bound());

  const DifferenceDecomposition still = decompose(std::vector<int>{0, 0, 0, 0}, {});
  CHECK(still.zero_count == 3);
  CHECK(still.excursion_count == 0);
  REQUIRE(still.holds.size() == 1);
  CHECK(still.holds[0].censored);
  CHECK(still.holds[0].length == 3);

  const DifferenceDecomposition origin = decompose(std::vector<int>{0}, {});
  CHECK(origin.zero_count == 0);
  CHECK(origin.excursion_count == 0);
}

TEST_CASE("alternating path: zero holds, many excursions") {
  const DifferenceDecomposition d = decompose(std::vector<int>{0, 2, 0, 2, 0, 2}, {});
  CHECK(d.zero_count == 3);
  CHECK(d.excursion_count == 3);
  CHECK(d.max_hold() == 0);
  CHECK(d.satisfies_sum_bound());
  CHECK(d.satisfies_product_bound());
}

TEST_CASE("decompose rejects malformed paths") {
  CHECK_THROWS_AS(decompose(std::vector<int>{}, {}), WalkError);
  CHECK_THROWS_AS(decompose(std::vector<int>{2, 0}, {}), WalkError);
  CHECK_THROWS_AS(decompose(std::vector<int>{0, 1}, {}), WalkError);
  CHECK_THROWS_AS(decompose(std::vector<int>{0, 4}, {}), WalkError);
}

TEST_CASE("bounds hold on sampled coupled paths") {
  for (std::uint64_t r = 0; r < 200; ++r) {
    const Environment env = generate_cone(EnvSeedSpec{15, 128, Measure::size_biased, r});
    const CoupledPaths pair = sample_coupled(env, 128, walk_key(15, r, 0), walk_key(15, r, 1));
    const DifferenceDecomposition d = decompose(pair.difference(), pair.occupancy);
    REQUIRE(d.satisfies_sum_bound());
    REQUIRE(d.satisfies_product_bound());
    int starts = 0;
    const auto& y = d.y_path;
    for (std::size_t k = 1; k < y.size(); ++k) starts += (y[k - 1] == 0 && y[k] != 0);
    REQUIRE(d.excursion_count == starts);
  }
}

TEST_CASE("lazy walk increments and running maximum") {
  std::uint64_t down = 0, stay = 0, up = 0;
  for (std::uint64_t r = 0; r < 100; ++r) {
    const LazyWalk w = lazy_walk(1000, derive_key(16, StreamDomain::lazy, {static_cast<std::int64_t>(r)}));
    for (std::size_t k = 1; k < w.path.size(); ++k) {
      const int d = w.path[k] - w.path[k - 1];
      down += d == -2;
      stay += d == 0;
      up += d == 2;
      REQUIRE(w.running_max[k] >= w.running_max[k - 1]);
      REQUIRE(w.running_max[k] >= w.path[k]);
    }
    if (w.running_max.back() > 0) {
      const auto hit = w.hitting_time_to(w.running_max.back());
      REQUIRE(hit.has_value());
      CHECK(w.path[static_cast<std::size_t>(*hit)] == w.running_max.back());
    }
  }
  const std::uint64_t total = down + stay + up;
  CHECK(total == 100000);
  CHECK(std::abs(z_score(down, total, 0.25)) < 5);
  CHECK(std::abs(z_score(stay, total, 0.5)) < 5);
  CHECK(std::abs(z_score(up, total, 0.25)) < 5);
  CHECK_FALSE(lazy_walk(10, 1).hitting_time_to(100).has_value());
  CHECK_THROWS(lazy_walk(-1, 1));
}

TEST_CASE("running maximum grows like sqrt(n)") {
  // E max ~ 2 sqrt(n / pi) for increment variance 2.
  const double target = 1.0 / std::sqrt(M_PI);
  constexpr int kRuns = 5000;
  for (int n : {1024, 4096}) {
    double sum = 0.0;
    for (int r = 0; r < kRuns; ++r) {
      sum += lazy_walk(n, derive_key(17, StreamDomain::lazy, {n, r})).running_max.back();
    }
    const double ratio = sum / kRuns / (2 * std::sqrt(n));
    CHECK(std::abs(ratio / target - 1) < 0.1);
  }
}

TEST_CASE("difference transitions follow the separation law") {
  const TransitionTally tally = separation_trials(EnsembleSpec{18, 400, 1, Measure::size_biased}, 256);
  const std::uint64_t off = tally.off_zero_total();
  REQUIRE(off > 10000);
  CHECK(std::abs(z_score(tally.off_zero_down, off, 0.25)) < 5);
  CHECK(std::abs(z_score(tally.off_zero_stay, off, 0.5)) < 5);
  CHECK(std::abs(z_score(tally.off_zero_up, off, 0.25)) < 5);
  REQUIRE(tally.at_zero.count(1) == 1);
  CHECK(tally.at_zero.at(1).leave == 0);
  for (std::uint32_t v = 2; v <= 4; ++v) {
    const StayLeave s = tally.at_zero.at(v);
    const double p = (1.0 + v) / (2.0 * v);
    CHECK(std::abs(z_score(s.stay, s.total(), p)) < 5);
  }
  const StayLeave pooled = tally.pooled_at_zero(2);
  std::uint64_t expect = 0;
  for (const auto& [v, s] : tally.at_zero) expect += v >= 2 ? s.total() : 0;
  CHECK(pooled.total() == expect);
}

TEST_CASE("tally merge adds counts") {
  TransitionTally a, b;
  a.record(0, 0, 2);
  a.record(2, 0, 9);
  b.record(0, 2, 2);
  b.record(-2, -2, 1);
  a.merge(b);
  CHECK(a.off_zero_down == 1);
  CHECK(a.off_zero_stay == 1);
  CHECK(a.at_zero.at(2).stay == 1);
  CHECK(a.at_zero.at(2).leave == 1);
}

TEST_CASE("off-zero increments of Y match the lazy walk in triples") {
  // Increments taken at successive off-zero times are i.i.d. (stopping-time
  // selection), so non-overlapping triples are compared with lazy-walk triples.
  auto bin = [](int a, int b, int c) { return 9 * (a / 2 + 1) + 3 * (b / 2 + 1) + (c / 2 + 1); };
  std::vector<double> from_y(27, 0.0), from_lazy(27, 0.0);
  std::vector<int> pending;
  for (std::uint64_t r = 0; r < 300; ++r) {
    const EnvSeedSpec spec{19, 256, Measure::size_biased, r};
    ConeStream stream(spec, Sublattice::walk);
    CoupledStepper pair(walk_key(19, r, 0), walk_key(19, r, 1));
    pending.clear();
    for (int k = 0; k < 256; ++k) {
      if (k > 0) stream.advance();
      const int before = pair.difference();
      pair.step(stream.walk_row());
      if (before == 0) continue;
      pending.push_back(pair.difference() - before);
      if (pending.size() == 3) {
        from_y[static_cast<std::size_t>(bin(pending[0], pending[1], pending[2]))] += 1;
        pending.clear();
      }
    }
  }
  const LazyWalk lazy = lazy_walk(300000, derive_key(19, StreamDomain::lazy, {0}));
  for (std::size_t k = 0; k + 3 < lazy.path.size(); k += 3) {
    const int a = lazy.path[k + 1] - lazy.path[k];
    const int b = lazy.path[k + 2] - lazy.path[k + 1];
    const int c = lazy.path[k + 3] - lazy.path[k + 2];
    from_lazy[static_cast<std::size_t>(bin(a, b, c))] += 1;
  }
  double n1 = 0, n2 = 0;
  for (int i = 0; i < 27; ++i) {
    n1 += from_y[static_cast<std::size_t>(i)];
    n2 += from_lazy[static_cast<std::size_t>(i)];
  }
  REQUIRE(n1 > 10000);
  double chi2 = 0.0;
  for (int i = 0; i < 27; ++i) {
    const double a = from_y[static_cast<std::size_t>(i)];
    const double b = from_lazy[static_cast<std::size_t>(i)];
    if (a + b == 0) continue;
    const double d = std::sqrt(n2 / n1) * a - std::sqrt(n1 / n2) * b;
    chi2 += d * d / (a + b);
  }
  CHECK(chi2 < 45.6417);  // chi-square, 26 df, 1% upper point
}

TEST_CASE("occupancy seen from the walk keeps the size-biased law") {
  // v(X_k) ~ 1 + Poisson(1) at every k.
  const std::vector<int> times{0, 30, 100};
  std::vector<std::vector<double>> counts(times.size(), std::vector<double>(5, 0.0));
  constexpr int kEnvs = 20000;
  for (int r = 0; r < kEnvs; ++r) {
    const EnvSeedSpec spec{20, 101, Measure::size_biased, static_cast<std::uint64_t>(r)};
    ConeStream stream(spec, Sublattice::walk);
    Xoshiro256pp rng(walk_key(20, static_cast<std::uint64_t>(r), 0));
    int index = 0;
    std::size_t next = 0;
    for (int k = 0; k <= 100; ++k) {
      if (k > 0) stream.advance();
      const Cell c = stream.walk_row()[static_cast<std::size_t>(index)];
      if (next < times.size() && times[next] == k) {
        counts[next][std::min<std::size_t>(c.occupancy() - 1, 4)] += 1;
        ++next;
      }
      if (walk_step(c, rng.uniform()) > 0) ++index;
    }
  }
  // P(Poisson(1) = j) for j = 0..3, remainder in the last bin.
  const double e = std::exp(-1.0);
  const std::vector<double> p{e, e, e / 2, e / 6, 1 - e * (1 + 1 + 0.5 + 1.0 / 6)};
  for (const auto& row : counts) {
    double chi2 = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      const double expected = kEnvs * p[j];
      chi2 += (row[j] - expected) * (row[j] - expected) / expected;
    }
    CHECK(chi2 < 13.2767);  // 4 df, 1% upper point
  }
}
