#ifndef RMS_RNG_HPP
#define RMS_RNG_HPP

#include <bit>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>

namespace rms {

// Stream domains keep keys from different consumers disjoint even when the
// numeric path components coincide.
enum class StreamDomain : std::uint64_t {
  initial_count = 0x11,
  walker = 0x12,
  cone = 0x13,
  walk = 0x14,
  lazy = 0x15,
};

/// SplitMix64 finalizer (Stafford variant 13).
constexpr std::uint64_t mix64(std::uint64_t x) {
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

/// Derives a stream key from a top-level seed, a domain and a path of
/// integer components. Pure function; sign-extended negatives are fine.
///
/// key_0 = mix64(seed + golden), key_{i+1} = mix64(key_i ^ mix64(part_i + golden * (i + 2)))
inline std::uint64_t derive_key(std::uint64_t seed, StreamDomain domain,
                                std::initializer_list<std::int64_t> parts) {
  constexpr std::uint64_t golden = 0x9e3779b97f4a7c15ULL;
  std::uint64_t key = mix64(seed + golden);
  key = mix64(key ^ mix64(static_cast<std::uint64_t>(domain) + golden * 2));
  std::uint64_t i = 3;
  for (std::int64_t part : parts) {
    key = mix64(key ^ mix64(static_cast<std::uint64_t>(part) + golden * i));
    ++i;
  }
  return key;
}

/// xoshiro256++ seeded from a single 64-bit key through SplitMix64.
/// Satisfies UniformRandomBitGenerator.
class Xoshiro256pp {
 public:
  using result_type = std::uint64_t;

  explicit Xoshiro256pp(std::uint64_t key) {
    std::uint64_t sm = key;
    for (auto& word : s_) {
      sm += 0x9e3779b97f4a7c15ULL;
      word = mix64(sm);
    }
  }

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return std::numeric_limits<result_type>::max(); }

  result_type operator()() {
    const std::uint64_t result = std::rotl(s_[0] + s_[3], 23) + s_[0];
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = std::rotl(s_[3], 45);
    return result;
  }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

 private:
  std::uint64_t s_[4];
};

/// Engine plus a buffer of fair bits. Binomial(n, 1/2) is the popcount of
/// n fresh bits.
class FairBits {
 public:
  explicit FairBits(std::uint64_t key) : rng_(key) {}

  Xoshiro256pp& engine() { return rng_; }
  double uniform() { return rng_.uniform(); }

  std::uint32_t binomial_half(std::uint32_t n) {
    if (n < left_) {
      const auto count = static_cast<std::uint32_t>(std::popcount(buffer_ & ((1ULL << n) - 1)));
      buffer_ >>= n;
      left_ -= n;
      return count;
    }
    std::uint32_t count = 0;
    while (n > 0) {
      if (left_ == 0) {
        buffer_ = rng_();
        left_ = 64;
      }
      const std::uint32_t take = n < left_ ? n : left_;
      const std::uint64_t mask = take == 64 ? ~0ULL : ((1ULL << take) - 1);
      count += static_cast<std::uint32_t>(std::popcount(buffer_ & mask));
      buffer_ = take == 64 ? 0 : buffer_ >> take;
      left_ -= take;
      n -= take;
    }
    return count;
  }

  int sign() { return binomial_half(1) == 1 ? 1 : -1; }

 private:
  Xoshiro256pp rng_;
  std::uint64_t buffer_ = 0;
  std::uint32_t left_ = 0;
};

/// Poisson(mean) by sequential inversion. Intended for the small means used
/// here (1 and 1/2); cost is O(mean).
inline std::uint32_t poisson_inversion(Xoshiro256pp& rng, double mean) {
  const double u = rng.uniform();
  double pmf = std::exp(-mean);
  double cdf = pmf;
  std::uint32_t k = 0;
  while (u >= cdf) {
    ++k;
    pmf *= mean / k;
    const double next = cdf + pmf;
    if (next == cdf) break;  // tail underflow
    cdf = next;
  }
  return k;
}

}  // namespace rms

#endif
