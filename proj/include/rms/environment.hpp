#ifndef RMS_ENVIRONMENT_HPP
#define RMS_ENVIRONMENT_HPP

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rms/rng.hpp"

namespace rms {

enum class Measure : std::uint8_t { base = 0, size_biased = 1 };

std::string to_string(Measure m);
Measure measure_from_string(const std::string& s);

/// Edge crossings at one space-time cell. Occupancy is derived.
struct Cell {
  std::uint32_t plus = 0;
  std::uint32_t minus = 0;

  std::uint32_t occupancy() const { return plus + minus; }
  bool operator==(const Cell&) const = default;
};

struct EnvSeedSpec {
  std::uint64_t seed = 0;
  int horizon = 0;
  Measure measure = Measure::size_biased;
  std::uint64_t replicate = 0;
};

class EnvironmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a cell outside the stored window is requested.
class WindowError : public EnvironmentError {
 public:
  using EnvironmentError::EnvironmentError;
};

/// Raised by deserialize() for malformed streams.
class DecodeError : public EnvironmentError {
 public:
  using EnvironmentError::EnvironmentError;
};

/// Initial walker counts on the sites [lo, lo + counts.size()).
struct InitialCounts {
  int lo = 0;
  std::vector<std::uint32_t> counts;

  int hi() const { return lo + static_cast<int>(counts.size()) - 1; }
  std::uint32_t at(int site) const;
};

struct Walker {
  int start = 0;
  std::uint32_t index = 0;      // i-th walker at its start site
  std::vector<std::int8_t> steps;  // each +1 or -1

  int position(int t) const;
};

struct WalkerSet {
  int horizon = 0;
  int lo = 0;  // initial window the walkers were drawn from
  int hi = -1;
  std::vector<Walker> walkers;
};

/// One stored time slice: cells for sites [lo, lo + cells.size()).
struct EnvRow {
  int lo = 0;
  std::vector<Cell> cells;

  int hi() const { return lo + static_cast<int>(cells.size()) - 1; }
  bool contains(int y) const { return y >= lo && y <= hi(); }
  bool operator==(const EnvRow&) const = default;
};

struct CellRef {
  int t;
  int y;
};

/// Immutable-after-construction space-time environment on a finite window.
/// Rows exist for t in [0, horizon); row t holds e+(t,.) and e-(t,.).
class Environment {
 public:
  Environment() = default;
  Environment(int horizon, std::uint64_t seed, Measure measure, std::vector<EnvRow> rows);

  /// Zero-filled rows over the light cone |y| <= t, for hand-built environments.
  static Environment light_cone(int horizon, std::uint64_t seed, Measure measure);

  int horizon() const { return horizon_; }
  std::uint64_t seed() const { return seed_; }
  Measure measure() const { return measure_; }

  bool contains(int t, int y) const;
  const Cell& at(int t, int y) const;
  std::uint32_t occupancy(int t, int y) const { return at(t, y).occupancy(); }
  const EnvRow& row(int t) const;
  std::span<const EnvRow> rows() const { return rows_; }

  /// Writes into a hand-built environment; counts must stay below 2^31.
  void set(int t, int y, std::uint32_t plus, std::uint32_t minus);

  /// Cells of row t on the walk sublattice (y = 2i - t, i = 0..t).
  /// Throws WindowError if the row does not cover |y| <= t.
  std::vector<Cell> lattice_row(int t) const;

  /// First interior cell violating v(t,y) = e+(t-1,y-1) + e-(t-1,y+1).
  std::optional<CellRef> flow_violation() const;

  bool operator==(const Environment&) const = default;

 private:
  int horizon_ = 0;
  std::uint64_t seed_ = 0;
  Measure measure_ = Measure::base;
  std::vector<EnvRow> rows_;
};

// Initial counts on [-2T, 2T]; under size_biased the count at site 0 is
// 1 + Poisson(1). Site k draws from its own stream keyed by (seed, replicate, k).
InitialCounts sample_initial_counts(const EnvSeedSpec& spec);
InitialCounts sample_initial_counts(const EnvSeedSpec& spec, int lo, int hi);

// Walker (k, i) steps from the stream keyed by (seed, replicate, k, i).
WalkerSet evolve_walkers(const InitialCounts& counts, const EnvSeedSpec& spec);

Environment crossings_from_walkers(const WalkerSet& walkers, std::uint64_t seed, Measure measure);

/// Walker construction: initial counts, walks, crossings. Rows are exact on
/// |y| <= 2T - t, which contains the light cone.
Environment generate(const EnvSeedSpec& spec);

/// Same law as generate(), built directly on the light cone |y| <= t.
Environment generate_cone(const EnvSeedSpec& spec);

enum class Sublattice {
  walk,  // y = t mod 2 only: the cells the walk and the mass can reach
  full,
};

/// Row-by-row light-cone generator. Memory is O(t) for the current row.
///
/// The cone is exact because walkers only enter it through its boundary:
/// on each sublattice, the walkers first entering at the right (left) boundary
/// at time s >= 1 are Poisson(1/2), independent over s, side, and everything
/// already inside. Inside the cone a cell's v walkers split Bin(v, 1/2).
class ConeStream {
 public:
  ConeStream(const EnvSeedSpec& spec, Sublattice sublattice);

  int time() const { return t_; }

  /// Cells of the current row at y = 2i - t, i = 0..t.
  std::span<const Cell> walk_row() const { return even_.cells; }

  /// Cells at y = 2i - t + 1, i = 0..t-1 (empty when sublattice is walk).
  std::span<const Cell> odd_row() const { return odd_.cells; }

  /// Full row over [-t, t]; requires Sublattice::full.
  EnvRow full_row() const;

  void advance();

 private:
  struct Lattice {
    FairBits bits;
    std::vector<Cell> cells;
    std::vector<std::uint32_t> occupancy;
    explicit Lattice(std::uint64_t key) : bits(key) {}
  };

  static void split(Lattice& lat);
  static void grow(Lattice& lat);

  Sublattice sublattice_;
  int t_ = 0;
  Lattice even_;
  Lattice odd_;
};

// Binary format: "RMSENV1", u32 horizon, u64 seed, u8 measure (little
// endian), then per row: varint lo (zigzag), varint width, and
// varint triplets (e+, e-, v).
void serialize(const Environment& env, std::ostream& out);
std::vector<std::uint8_t> serialize(const Environment& env);
Environment deserialize(std::istream& in);
Environment deserialize(std::span<const std::uint8_t> bytes);

}  // namespace rms

#endif
