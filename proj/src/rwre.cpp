#include "rms/rwre.hpp"

#include <algorithm>
#include <string>

namespace rms {

std::vector<int> WalkPath::positions() const {
  std::vector<int> out;
  out.reserve(steps.size() + 1);
  int y = start.y;
  out.push_back(y);
  for (auto s : steps) out.push_back(y += s);
  return out;
}

std::vector<int> CoupledPaths::difference() const {
  const auto a = first.positions();
  const auto b = second.positions();
  std::vector<int> out(a.size());
  for (std::size_t k = 0; k < a.size(); ++k) out[k] = a[k] - b[k];
  return out;
}

int walk_step(const Cell& cell, double u) {
  const std::uint32_t v = cell.occupancy();
  if (v == 0) throw WalkError("walk reached an empty cell");
  return u * v < cell.plus ? 1 : -1;
}

SpaceTime walk_step(const Environment& env, SpaceTime at, double u) {
  const Cell& c = env.at(at.t, at.y);
  if (c.occupancy() == 0) {
    throw WalkError("walk reached empty cell (t=" + std::to_string(at.t) + ", y=" + std::to_string(at.y) + ")");
  }
  return SpaceTime{at.t + 1, at.y + walk_step(c, u)};
}

WalkPath sample_walk(const Environment& env, int n, std::uint64_t stream_key) {
  if (n < 0 || n > env.horizon()) throw WalkError("walk length outside environment horizon");
  Xoshiro256pp rng(stream_key);
  WalkPath path;
  path.steps.resize(static_cast<std::size_t>(n));
  SpaceTime at{};
  for (int k = 0; k < n; ++k) {
    const SpaceTime next = walk_step(env, at, rng.uniform());
    path.steps[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(next.y - at.y);
    at = next;
  }
  return path;
}

CoupledPaths sample_coupled(const Environment& env, int n, std::uint64_t first_key, std::uint64_t second_key) {
  if (n < 0 || n > env.horizon()) throw WalkError("walk length outside environment horizon");
  CoupledStepper pair(first_key, second_key);
  CoupledPaths out;
  out.first.steps.resize(static_cast<std::size_t>(n));
  out.second.steps.resize(static_cast<std::size_t>(n));
  out.occupancy.resize(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) {
    const auto row = env.lattice_row(k);
    const int a = pair.first_y();
    const int b = pair.second_y();
    out.occupancy[static_cast<std::size_t>(k)] = pair.occupancy_at_first(row);
    pair.step(row);
    out.first.steps[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(pair.first_y() - a);
    out.second.steps[static_cast<std::size_t>(k)] = static_cast<std::int8_t>(pair.second_y() - b);
  }
  return out;
}

CoupledStepper::CoupledStepper(std::uint64_t first_key, std::uint64_t second_key)
    : first_rng_(first_key), second_rng_(second_key) {}

std::uint32_t CoupledStepper::occupancy_at_first(std::span<const Cell> row) const {
  return row[static_cast<std::size_t>(first_)].occupancy();
}

void CoupledStepper::step(std::span<const Cell> row) {
  if (row.size() != static_cast<std::size_t>(t_) + 1) throw WalkError("row does not match walk time");
  // Independent uniforms for the two copies, coincident or not.
  const double u = first_rng_.uniform();
  const double w = second_rng_.uniform();
  if (walk_step(row[static_cast<std::size_t>(first_)], u) > 0) ++first_;
  if (walk_step(row[static_cast<std::size_t>(second_)], w) > 0) ++second_;
  ++t_;
}

// ---------------------------------------------------------------------------

int DifferenceDecomposition::max_hold() const {
  int m = 0;
  for (const Hold& h : holds) m = std::max(m, h.length);
  return m;
}

long DifferenceDecomposition::hold_sum() const {
  long s = 0;
  for (const Hold& h : holds) s += h.length;
  return s;
}

bool DifferenceDecomposition::satisfies_sum_bound() const {
  return zero_count <= hold_sum() + excursion_count + 1;
}

bool DifferenceDecomposition::satisfies_product_bound() const {
  return static_cast<long>(zero_count) <= static_cast<long>(excursion_count + 1) * (max_hold() + 1);
}

DifferenceDecomposition decompose(std::span<const int> y_path, std::span<const std::uint32_t> occupancy) {
  if (y_path.empty()) throw WalkError("empty difference path");
  if (y_path[0] != 0) throw WalkError("difference path must start at 0");
  const int n = static_cast<int>(y_path.size()) - 1;
  for (int k = 0; k <= n; ++k) {
    if (y_path[static_cast<std::size_t>(k)] % 2 != 0) {
      throw WalkError("odd difference at step " + std::to_string(k));
    }
    if (k > 0) {
      const int d = y_path[static_cast<std::size_t>(k)] - y_path[static_cast<std::size_t>(k - 1)];
      if (d != 0 && d != 2 && d != -2) throw WalkError("malformed increment at step " + std::to_string(k));
    }
  }

  DifferenceDecomposition out;
  out.horizon = n;
  out.y_path.assign(y_path.begin(), y_path.end());
  for (int i = 0; i < n; ++i) out.zero_count += y_path[static_cast<std::size_t>(i)] == 0;

  auto record_hold = [&](int start, int last, bool censored) {
    Hold h;
    h.start = start;
    h.length = last - start;
    h.censored = censored;
    for (int k = start; k <= last && k < static_cast<int>(occupancy.size()); ++k) {
      h.meeting_occupancy.push_back(occupancy[static_cast<std::size_t>(k)]);
    }
    out.holds.push_back(std::move(h));
  };

  int k = 0;
  for (;;) {
    // At zero from time k: hold until the first nonzero value.
    const int hold_start = k;
    while (k < n && y_path[static_cast<std::size_t>(k + 1)] == 0) ++k;
    if (k == n) {
      record_hold(hold_start, n, true);
      break;
    }
    record_hold(hold_start, k, false);
    Excursion e;
    e.start = k + 1;
    k = e.start;
    while (k < n && y_path[static_cast<std::size_t>(k)] != 0) ++k;
    if (y_path[static_cast<std::size_t>(k)] != 0) {
      e.end = n;
      e.censored = true;
      out.excursions.push_back(e);
      break;
    }
    e.end = k;
    out.excursions.push_back(e);
  }
  out.excursion_count = static_cast<int>(out.excursions.size());
  return out;
}

// ---------------------------------------------------------------------------

std::optional<int> LazyWalk::hitting_time_to(int level) const {
  for (std::size_t k = 0; k < path.size(); ++k) {
    if (path[k] >= level) return static_cast<int>(k);
  }
  return std::nullopt;
}

LazyWalk lazy_walk(int n, std::uint64_t stream_key) {
  if (n < 0) throw std::invalid_argument("lazy walk length must be >= 0");
  FairBits bits(stream_key);
  LazyWalk w;
  w.path.resize(static_cast<std::size_t>(n) + 1);
  w.running_max.resize(static_cast<std::size_t>(n) + 1);
  int r = 0;
  int best = 0;
  for (int k = 1; k <= n; ++k) {
    // Difference of two fair +-1 steps.
    r += bits.sign() - bits.sign();
    best = std::max(best, r);
    w.path[static_cast<std::size_t>(k)] = r;
    w.running_max[static_cast<std::size_t>(k)] = best;
  }
  return w;
}

// ---------------------------------------------------------------------------

void TransitionTally::record(int y, int y_next, std::uint32_t occupancy) {
  const int d = y_next - y;
  if (y != 0) {
    if (d < 0) {
      ++off_zero_down;
    } else if (d == 0) {
      ++off_zero_stay;
    } else {
      ++off_zero_up;
    }
  } else {
    StayLeave& s = at_zero[occupancy];
    if (d == 0) {
      ++s.stay;
    } else {
      ++s.leave;
    }
  }
}

void TransitionTally::add(std::span<const int> y_path, std::span<const std::uint32_t> occupancy) {
  const std::size_t n = y_path.empty() ? 0 : y_path.size() - 1;
  for (std::size_t k = 0; k < n; ++k) {
    if (y_path[k] != 0 || k < occupancy.size()) {
      record(y_path[k], y_path[k + 1], k < occupancy.size() ? occupancy[k] : 0);
    }
  }
}

void TransitionTally::merge(const TransitionTally& other) {
  off_zero_down += other.off_zero_down;
  off_zero_stay += other.off_zero_stay;
  off_zero_up += other.off_zero_up;
  for (const auto& [v, s] : other.at_zero) {
    at_zero[v].stay += s.stay;
    at_zero[v].leave += s.leave;
  }
}

StayLeave TransitionTally::pooled_at_zero(std::uint32_t min_occupancy) const {
  StayLeave out;
  for (const auto& [v, s] : at_zero) {
    if (v < min_occupancy) continue;
    out.stay += s.stay;
    out.leave += s.leave;
  }
  return out;
}

TransitionTally separation_trials(const EnsembleSpec& ensemble, int n) {
  TransitionTally total;
  run_ordered<TransitionTally>(
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
        TransitionTally tally;
        tally.add(y, v);
        return tally;
      },
      [&](std::uint64_t, TransitionTally&& t) { total.merge(t); });
  return total;
}

}  // namespace rms
