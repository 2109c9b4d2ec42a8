#ifndef RMS_RWRE_HPP
#define RMS_RWRE_HPP

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

#include "rms/environment.hpp"
#include "rms/parallel.hpp"
#include "rms/rng.hpp"

namespace rms {

class WalkError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct SpaceTime {
  int t = 0;
  int y = 0;
  bool operator==(const SpaceTime&) const = default;
};

struct WalkPath {
  SpaceTime start;
  std::vector<std::int8_t> steps;

  int length() const { return static_cast<int>(steps.size()); }
  std::vector<int> positions() const;  // y coordinates, length() + 1 entries
};

/// Two walks from (0,0) driven by independent streams in the same environment.
/// occupancy[k] = v(X_k) for k < n.
struct CoupledPaths {
  WalkPath first;
  WalkPath second;
  std::vector<std::uint32_t> occupancy;

  std::vector<int> difference() const;  // Y_k = X_k - X~_k, k = 0..n
};

/// Stream key for walk `walk_id` of replicate `replicate`.
inline std::uint64_t walk_key(std::uint64_t seed, std::uint64_t replicate, std::uint64_t walk_id) {
  return derive_key(seed, StreamDomain::walk,
                    {static_cast<std::int64_t>(replicate), static_cast<std::int64_t>(walk_id)});
}

/// +1 with probability e+/v, -1 with probability e-/v, decided by u in [0,1).
int walk_step(const Cell& cell, double u);
SpaceTime walk_step(const Environment& env, SpaceTime at, double u);

WalkPath sample_walk(const Environment& env, int n, std::uint64_t stream_key);

/// Each copy draws its own uniform at every step, also when the two sit on
/// the same cell.
CoupledPaths sample_coupled(const Environment& env, int n, std::uint64_t first_key,
                            std::uint64_t second_key);

/// Coupled pair advanced one walk-sublattice row at a time; used by the
/// streaming experiments. Positions are sublattice indices (y = 2i - t).
class CoupledStepper {
 public:
  CoupledStepper(std::uint64_t first_key, std::uint64_t second_key);

  int time() const { return t_; }
  int first_y() const { return 2 * first_ - t_; }
  int second_y() const { return 2 * second_ - t_; }
  int difference() const { return 2 * (first_ - second_); }
  std::uint32_t occupancy_at_first(std::span<const Cell> row) const;

  /// Steps both walks using the row at the current time.
  void step(std::span<const Cell> row);

 private:
  Xoshiro256pp first_rng_;
  Xoshiro256pp second_rng_;
  int t_ = 0;
  int first_ = 0;
  int second_ = 0;
};

struct Excursion {
  int start = 0;     // alpha_j: first time with |Y| = 2
  int end = 0;       // beta_j: return time, or the horizon when censored
  bool censored = false;

  int length() const { return end - start; }  // T_j
};

struct Hold {
  int start = 0;   // 0 for the first hold, beta_j afterwards
  int length = 0;  // gamma_j: stay transitions at zero (truncated at n if censored)
  bool censored = false;
  std::vector<std::uint32_t> meeting_occupancy;  // v(X_k) over the hold
};

struct DifferenceDecomposition {
  int horizon = 0;
  std::vector<int> y_path;
  std::vector<Excursion> excursions;
  std::vector<Hold> holds;
  int excursion_count = 0;  // a(n)
  int zero_count = 0;       // #{i < n : Y_i = 0}

  int max_hold() const;
  long hold_sum() const;  // sum of gamma_i, i <= a(n)

  // zero_count <= sum_{i<=a(n)} gamma_i + (a(n) + 1)
  bool satisfies_sum_bound() const;
  // zero_count <= (a(n) + 1) * (max_j gamma_j + 1)
  bool satisfies_product_bound() const;
};

/// Splits Y into holds at zero and excursions away from zero. `occupancy`
/// may be shorter than the path; missing entries are simply not recorded.
DifferenceDecomposition decompose(std::span<const int> y_path, std::span<const std::uint32_t> occupancy);

struct LazyWalk {
  std::vector<int> path;         // R_0..R_n
  std::vector<int> running_max;  // R*_0..R*_n

  std::optional<int> hitting_time_to(int level) const;
};

/// Increments +2, 0, -2 with probabilities 1/4, 1/2, 1/4.
LazyWalk lazy_walk(int n, std::uint64_t stream_key);

struct StayLeave {
  std::uint64_t stay = 0;
  std::uint64_t leave = 0;

  std::uint64_t total() const { return stay + leave; }
};

/// Transition counts of Y: off zero by increment, at zero by occupancy v(X).
struct TransitionTally {
  std::uint64_t off_zero_down = 0;
  std::uint64_t off_zero_stay = 0;
  std::uint64_t off_zero_up = 0;
  std::map<std::uint32_t, StayLeave> at_zero;

  void record(int y, int y_next, std::uint32_t occupancy);
  void add(std::span<const int> y_path, std::span<const std::uint32_t> occupancy);
  void merge(const TransitionTally& other);
  std::uint64_t off_zero_total() const { return off_zero_down + off_zero_stay + off_zero_up; }
  StayLeave pooled_at_zero(std::uint32_t min_occupancy) const;
};

/// One coupled pair per environment, horizon n, tallied over the ensemble.
TransitionTally separation_trials(const EnsembleSpec& ensemble, int n);

}  // namespace rms

#endif
