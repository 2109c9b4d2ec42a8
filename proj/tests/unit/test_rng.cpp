#include <cmath>
#include <deque>
#include <vector>

#include "doctest.h"
#include "rms/rng.hpp"

using namespace rms;

TEST_CASE("derive_key is a pure function separating domains and parts") {
  CHECK(derive_key(7, StreamDomain::walker, {1, 2}) == derive_key(7, StreamDomain::walker, {1, 2}));
  CHECK(derive_key(7, StreamDomain::walker, {1, 2}) != derive_key(7, StreamDomain::walker, {2, 1}));
  CHECK(derive_key(7, StreamDomain::walker, {1, 2}) != derive_key(7, StreamDomain::cone, {1, 2}));
  CHECK(derive_key(7, StreamDomain::walker, {1}) != derive_key(8, StreamDomain::walker, {1}));
  CHECK(derive_key(7, StreamDomain::walker, {-1}) != derive_key(7, StreamDomain::walker, {1}));
}

TEST_CASE("uniform draws lie in [0,1) with mean 1/2") {
  Xoshiro256pp rng(42);
  double sum = 0;
  constexpr int kN = 200000;
  for (int i = 0; i < kN; ++i) {
    const double u = rng.uniform();
    REQUIRE(u >= 0.0);
    REQUIRE(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / kN - 0.5) < 4 * std::sqrt(1.0 / 12 / kN));
}

TEST_CASE("binomial_half consumes fair bits in order, lowest bit first") {
  FairBits bits(99);
  Xoshiro256pp reference(99);
  std::deque<int> queue;
  auto pull = [&](unsigned n) {
    unsigned count = 0;
    for (unsigned i = 0; i < n; ++i) {
      if (queue.empty()) {
        const std::uint64_t word = reference();
        for (int b = 0; b < 64; ++b) queue.push_back(static_cast<int>((word >> b) & 1));
      }
      count += queue.front();
      queue.pop_front();
    }
    return count;
  };
  for (unsigned n : {0u, 1u, 3u, 63u, 64u, 65u, 1u, 200u, 0u, 7u, 64u, 64u, 5u, 129u}) {
    CHECK(bits.binomial_half(n) == pull(n));
  }
}

TEST_CASE("binomial_half has mean n/2 and sign is balanced") {
  FairBits bits(5);
  double sum = 0;
  long signs = 0;
  constexpr int kN = 100000;
  for (int i = 0; i < kN; ++i) {
    sum += bits.binomial_half(10);
    signs += bits.sign();
  }
  CHECK(std::abs(sum / kN - 5.0) < 4 * std::sqrt(2.5 / kN));
  CHECK(std::abs(static_cast<double>(signs)) < 4 * std::sqrt(static_cast<double>(kN)));
}

TEST_CASE("Poisson(1) by inversion matches the pmf (chi-square at 1%)") {
  Xoshiro256pp rng(11);
  constexpr int kN = 200000;
  std::vector<double> observed(6, 0.0);
  for (int i = 0; i < kN; ++i) {
    const auto k = poisson_inversion(rng, 1.0);
    observed[std::min<std::size_t>(k, 5)] += 1;
  }
  const double pmf[5] = {0.36787944117144233, 0.36787944117144233, 0.18393972058572117, 0.06131324019524039,
                         0.015328310048810098};
  double chi2 = 0;
  double tail = 1.0;
  for (int k = 0; k < 5; ++k) {
    const double e = pmf[k] * kN;
    chi2 += (observed[k] - e) * (observed[k] - e) / e;
    tail -= pmf[k];
  }
  chi2 += (observed[5] - tail * kN) * (observed[5] - tail * kN) / (tail * kN);
  CHECK(chi2 < 15.086272469388990);  // 99% quantile, 5 degrees of freedom
}
