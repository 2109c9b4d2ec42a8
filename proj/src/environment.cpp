#include "rms/environment.hpp"

#include <algorithm>
#include <array>
#include <cstring>
#include <istream>
#include <iterator>
#include <limits>
#include <ostream>
#include <sstream>

namespace rms {

namespace {

constexpr std::uint64_t kMaxCount = (1ULL << 31) - 1;
constexpr int kMaxHorizon = 1 << 20;
constexpr std::array<char, 7> kMagic = {'R', 'M', 'S', 'E', 'N', 'V', '1'};

std::string cell_name(int t, int y) {
  std::ostringstream s;
  s << "(t=" << t << ", y=" << y << ")";
  return s.str();
}

void check_count(std::uint64_t count, int t, int y) {
  if (count > kMaxCount) {
    throw EnvironmentError("count overflow at cell " + cell_name(t, y));
  }
}

}  // namespace

std::string to_string(Measure m) { return m == Measure::base ? "base" : "size-biased"; }

Measure measure_from_string(const std::string& s) {
  if (s == "base") return Measure::base;
  if (s == "size-biased" || s == "size_biased") return Measure::size_biased;
  throw std::invalid_argument("unknown measure '" + s + "' (expected base or size-biased)");
}

std::uint32_t InitialCounts::at(int site) const {
  if (site < lo || site > hi()) return 0;
  return counts[static_cast<std::size_t>(site - lo)];
}

int Walker::position(int t) const {
  int y = start;
  for (int s = 0; s < t; ++s) y += steps[static_cast<std::size_t>(s)];
  return y;
}

// ---------------------------------------------------------------------------

Environment::Environment(int horizon, std::uint64_t seed, Measure measure,
                         std::vector<EnvRow> rows)
    : horizon_(horizon), seed_(seed), measure_(measure), rows_(std::move(rows)) {
  if (horizon_ < 0 || horizon_ > kMaxHorizon) {
    throw EnvironmentError("horizon " + std::to_string(horizon_) + " outside addressable window");
  }
  if (static_cast<int>(rows_.size()) != horizon_) {
    throw EnvironmentError("expected " + std::to_string(horizon_) + " rows, got " +
                           std::to_string(rows_.size()));
  }
  for (int t = 0; t < horizon_; ++t) {
    const EnvRow& r = rows_[static_cast<std::size_t>(t)];
    for (std::size_t i = 0; i < r.cells.size(); ++i) {
      const Cell& c = r.cells[i];
      check_count(std::uint64_t{c.plus} + c.minus, t, r.lo + static_cast<int>(i));
    }
  }
  if (measure_ == Measure::size_biased && horizon_ > 0 && contains(0, 0) && occupancy(0, 0) == 0) {
    throw EnvironmentError("size-biased environment with v(0,0) = 0");
  }
}

Environment Environment::light_cone(int horizon, std::uint64_t seed, Measure measure) {
  Environment env;
  env.horizon_ = horizon;
  env.seed_ = seed;
  env.measure_ = measure;
  env.rows_.resize(static_cast<std::size_t>(horizon));
  for (int t = 0; t < horizon; ++t) {
    env.rows_[static_cast<std::size_t>(t)].lo = -t;
    env.rows_[static_cast<std::size_t>(t)].cells.assign(static_cast<std::size_t>(2 * t + 1), Cell{});
  }
  return env;
}

bool Environment::contains(int t, int y) const {
  return t >= 0 && t < horizon_ && rows_[static_cast<std::size_t>(t)].contains(y);
}

const EnvRow& Environment::row(int t) const {
  if (t < 0 || t >= horizon_) {
    throw WindowError("row t=" + std::to_string(t) + " outside horizon " + std::to_string(horizon_));
  }
  return rows_[static_cast<std::size_t>(t)];
}

const Cell& Environment::at(int t, int y) const {
  const EnvRow& r = row(t);
  if (!r.contains(y)) throw WindowError("cell " + cell_name(t, y) + " outside stored window");
  return r.cells[static_cast<std::size_t>(y - r.lo)];
}

void Environment::set(int t, int y, std::uint32_t plus, std::uint32_t minus) {
  check_count(std::uint64_t{plus} + minus, t, y);
  if (t < 0 || t >= horizon_ || !rows_[static_cast<std::size_t>(t)].contains(y)) {
    throw WindowError("cell " + cell_name(t, y) + " outside stored window");
  }
  EnvRow& r = rows_[static_cast<std::size_t>(t)];
  r.cells[static_cast<std::size_t>(y - r.lo)] = Cell{plus, minus};
}

std::vector<Cell> Environment::lattice_row(int t) const {
  const EnvRow& r = row(t);
  if (!r.contains(-t) || !r.contains(t)) {
    throw WindowError("row t=" + std::to_string(t) + " does not cover the light cone");
  }
  std::vector<Cell> out(static_cast<std::size_t>(t + 1));
  for (int i = 0; i <= t; ++i) out[static_cast<std::size_t>(i)] = r.cells[static_cast<std::size_t>(2 * i - t - r.lo)];
  return out;
}

std::optional<CellRef> Environment::flow_violation() const {
  for (int t = 1; t < horizon_; ++t) {
    const EnvRow& prev = rows_[static_cast<std::size_t>(t - 1)];
    const EnvRow& cur = rows_[static_cast<std::size_t>(t)];
    for (int y = cur.lo; y <= cur.hi(); ++y) {
      if (!prev.contains(y - 1) || !prev.contains(y + 1)) continue;
      const std::uint64_t inflow = std::uint64_t{prev.cells[static_cast<std::size_t>(y - 1 - prev.lo)].plus} +
                                   prev.cells[static_cast<std::size_t>(y + 1 - prev.lo)].minus;
      if (inflow != cur.cells[static_cast<std::size_t>(y - cur.lo)].occupancy()) return CellRef{t, y};
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------
// Walker construction

InitialCounts sample_initial_counts(const EnvSeedSpec& spec) {
  return sample_initial_counts(spec, -2 * spec.horizon, 2 * spec.horizon);
}

InitialCounts sample_initial_counts(const EnvSeedSpec& spec, int lo, int hi) {
  if (spec.horizon < 0) throw std::invalid_argument("horizon must be >= 0");
  InitialCounts out;
  out.lo = lo;
  out.counts.resize(static_cast<std::size_t>(std::max(0, hi - lo + 1)));
  for (int k = lo; k <= hi; ++k) {
    Xoshiro256pp rng(derive_key(spec.seed, StreamDomain::initial_count,
                                {static_cast<std::int64_t>(spec.replicate), k}));
    std::uint32_t count = poisson_inversion(rng, 1.0);
    if (k == 0 && spec.measure == Measure::size_biased) count += 1;  // size-biased Poisson(1) = 1 + Poisson(1)
    out.counts[static_cast<std::size_t>(k - lo)] = count;
  }
  return out;
}

WalkerSet evolve_walkers(const InitialCounts& counts, const EnvSeedSpec& spec) {
  WalkerSet set;
  set.horizon = spec.horizon;
  set.lo = counts.lo;
  set.hi = counts.hi();
  for (int k = counts.lo; k <= counts.hi(); ++k) {
    const std::uint32_t n = counts.at(k);
    for (std::uint32_t i = 0; i < n; ++i) {
      FairBits bits(derive_key(spec.seed, StreamDomain::walker,
                               {static_cast<std::int64_t>(spec.replicate), k, i}));
      Walker w;
      w.start = k;
      w.index = i;
      w.steps.resize(static_cast<std::size_t>(spec.horizon));
      for (auto& s : w.steps) s = static_cast<std::int8_t>(bits.sign());
      set.walkers.push_back(std::move(w));
    }
  }
  return set;
}

Environment crossings_from_walkers(const WalkerSet& walkers, std::uint64_t seed, Measure measure) {
  const int horizon = walkers.horizon;
  std::vector<EnvRow> rows(static_cast<std::size_t>(horizon));
  // A cell is exact when every start site within distance t lies in the window.
  for (int t = 0; t < horizon; ++t) {
    EnvRow& r = rows[static_cast<std::size_t>(t)];
    r.lo = walkers.lo + t;
    r.cells.assign(static_cast<std::size_t>(std::max(0, walkers.hi - walkers.lo - 2 * t + 1)), Cell{});
  }
  for (const Walker& w : walkers.walkers) {
    if (static_cast<int>(w.steps.size()) != horizon) {
      throw std::invalid_argument("walker path length differs from horizon");
    }
    int y = w.start;
    for (int t = 0; t < horizon; ++t) {
      const int step = w.steps[static_cast<std::size_t>(t)];
      EnvRow& r = rows[static_cast<std::size_t>(t)];
      if (r.contains(y)) {
        Cell& c = r.cells[static_cast<std::size_t>(y - r.lo)];
        if (step > 0) {
          ++c.plus;
        } else {
          ++c.minus;
        }
      }
      y += step;
    }
  }
  return Environment(horizon, seed, measure, std::move(rows));
}

Environment generate(const EnvSeedSpec& spec) {
  if (spec.horizon < 0 || spec.horizon > kMaxHorizon) {
    throw EnvironmentError("horizon " + std::to_string(spec.horizon) + " outside addressable window");
  }
  const InitialCounts counts = sample_initial_counts(spec);
  return crossings_from_walkers(evolve_walkers(counts, spec), spec.seed, spec.measure);
}

// ---------------------------------------------------------------------------
// Light-cone construction

ConeStream::ConeStream(const EnvSeedSpec& spec, Sublattice sublattice)
    : sublattice_(sublattice),
      even_(derive_key(spec.seed, StreamDomain::cone, {static_cast<std::int64_t>(spec.replicate), 0})),
      odd_(derive_key(spec.seed, StreamDomain::cone, {static_cast<std::int64_t>(spec.replicate), 1})) {
  std::uint32_t origin = poisson_inversion(even_.bits.engine(), 1.0);
  if (spec.measure == Measure::size_biased) origin += 1;
  even_.occupancy.assign(1, origin);
  split(even_);
}

void ConeStream::split(Lattice& lat) {
  lat.cells.resize(lat.occupancy.size());
  for (std::size_t i = 0; i < lat.occupancy.size(); ++i) {
    const std::uint32_t v = lat.occupancy[i];
    const std::uint32_t up = lat.bits.binomial_half(v);
    lat.cells[i] = Cell{up, v - up};
  }
}

// Occupancy of the next row: interior cells receive e- from the same index and
// e+ from the index below; both boundary cells also receive Poisson(1/2)
// walkers entering from outside the cone.
void ConeStream::grow(Lattice& lat) {
  const std::size_t n = lat.cells.size();
  lat.occupancy.resize(n + 1);
  std::uint32_t carry = 0;
  for (std::size_t i = 0; i < n; ++i) {
    lat.occupancy[i] = carry + lat.cells[i].minus;
    carry = lat.cells[i].plus;
  }
  lat.occupancy[n] = carry;
  std::uint64_t left = poisson_inversion(lat.bits.engine(), 0.5);
  std::uint64_t right = poisson_inversion(lat.bits.engine(), 0.5);
  lat.occupancy.front() += static_cast<std::uint32_t>(left);
  lat.occupancy.back() += static_cast<std::uint32_t>(right);
  if (lat.occupancy.front() > kMaxCount || lat.occupancy.back() > kMaxCount) {
    throw EnvironmentError("count overflow on cone boundary");
  }
  split(lat);
}

void ConeStream::advance() {
  if (t_ == std::numeric_limits<int>::max() - 1) throw EnvironmentError("cone time overflow");
  grow(even_);
  if (sublattice_ == Sublattice::full) grow(odd_);
  ++t_;
}

EnvRow ConeStream::full_row() const {
  if (sublattice_ != Sublattice::full) throw std::logic_error("full_row() needs Sublattice::full");
  EnvRow r;
  r.lo = -t_;
  r.cells.resize(static_cast<std::size_t>(2 * t_ + 1));
  for (std::size_t i = 0; i < even_.cells.size(); ++i) r.cells[2 * i] = even_.cells[i];
  for (std::size_t i = 0; i < odd_.cells.size(); ++i) r.cells[2 * i + 1] = odd_.cells[i];
  return r;
}

Environment generate_cone(const EnvSeedSpec& spec) {
  if (spec.horizon < 0 || spec.horizon > kMaxHorizon) {
    throw EnvironmentError("horizon " + std::to_string(spec.horizon) + " outside addressable window");
  }
  std::vector<EnvRow> rows;
  rows.reserve(static_cast<std::size_t>(spec.horizon));
  ConeStream stream(spec, Sublattice::full);
  for (int t = 0; t < spec.horizon; ++t) {
    if (t > 0) stream.advance();
    rows.push_back(stream.full_row());
  }
  return Environment(spec.horizon, spec.seed, spec.measure, std::move(rows));
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

void put_varint(std::vector<std::uint8_t>& out, std::uint64_t x) {
  while (x >= 0x80) {
    out.push_back(static_cast<std::uint8_t>(x | 0x80));
    x >>= 7;
  }
  out.push_back(static_cast<std::uint8_t>(x));
}

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T x) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<std::uint8_t>(x >> (8 * i)));
}

std::uint64_t zigzag(std::int64_t x) { return (static_cast<std::uint64_t>(x) << 1) ^ static_cast<std::uint64_t>(x >> 63); }
std::int64_t unzigzag(std::uint64_t x) { return static_cast<std::int64_t>(x >> 1) ^ -static_cast<std::int64_t>(x & 1); }

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t remaining() const { return bytes_.size() - pos_; }

  std::uint8_t byte(const char* what) {
    if (pos_ >= bytes_.size()) throw DecodeError(std::string("truncated stream while reading ") + what);
    return bytes_[pos_++];
  }

  template <typename T>
  T le(const char* what) {
    T x = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) x |= static_cast<T>(static_cast<T>(byte(what)) << (8 * i));
    return x;
  }

  std::uint64_t varint(const char* what) {
    std::uint64_t x = 0;
    for (int shift = 0; shift < 64; shift += 7) {
      const std::uint8_t b = byte(what);
      x |= static_cast<std::uint64_t>(b & 0x7f) << shift;
      if ((b & 0x80) == 0) return x;
    }
    throw DecodeError(std::string("overlong varint while reading ") + what);
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> serialize(const Environment& env) {
  std::vector<std::uint8_t> out(kMagic.begin(), kMagic.end());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(env.horizon()));
  put_le<std::uint64_t>(out, env.seed());
  out.push_back(static_cast<std::uint8_t>(env.measure()));
  for (const EnvRow& r : env.rows()) {
    put_varint(out, zigzag(r.lo));
    put_varint(out, r.cells.size());
    for (const Cell& c : r.cells) {
      put_varint(out, c.plus);
      put_varint(out, c.minus);
      put_varint(out, c.occupancy());
    }
  }
  return out;
}

void serialize(const Environment& env, std::ostream& out) {
  const auto bytes = serialize(env);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw EnvironmentError("write failed");
}

Environment deserialize(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  std::array<char, 7> magic{};
  for (auto& c : magic) c = static_cast<char>(in.byte("magic"));
  if (!std::equal(magic.begin(), magic.end() - 1, kMagic.begin())) throw DecodeError("not an environment file (bad magic)");
  if (magic.back() != kMagic.back()) {
    throw DecodeError(std::string("version mismatch: file version ") + magic.back() + ", reader version " + kMagic.back());
  }
  const auto horizon = in.le<std::uint32_t>("horizon");
  const auto seed = in.le<std::uint64_t>("seed");
  const auto measure_byte = in.byte("measure tag");
  if (measure_byte > 1) throw DecodeError("unknown measure tag " + std::to_string(measure_byte));
  if (horizon > static_cast<std::uint32_t>(kMaxHorizon)) throw DecodeError("horizon field out of range");
  // Every row needs at least two bytes, so a horizon beyond that is corrupt.
  if (horizon > in.remaining() / 2) throw DecodeError("horizon field exceeds stream length");

  std::vector<EnvRow> rows(horizon);
  for (std::uint32_t t = 0; t < horizon; ++t) {
    const std::int64_t lo = unzigzag(in.varint("row origin"));
    const std::uint64_t width = in.varint("row width");
    if (width > in.remaining() / 3) {
      throw DecodeError("row " + std::to_string(t) + " width field " + std::to_string(width) + " exceeds stream length");
    }
    if (lo < std::numeric_limits<int>::min() / 2 || lo > std::numeric_limits<int>::max() / 2) {
      throw DecodeError("row " + std::to_string(t) + " origin out of range");
    }
    EnvRow& r = rows[t];
    r.lo = static_cast<int>(lo);
    r.cells.resize(width);
    for (std::uint64_t i = 0; i < width; ++i) {
      const std::uint64_t plus = in.varint("e+");
      const std::uint64_t minus = in.varint("e-");
      const std::uint64_t v = in.varint("v");
      const int y = r.lo + static_cast<int>(i);
      if (v != plus + minus) {
        throw DecodeError("invariant violation at cell " + cell_name(static_cast<int>(t), y) + ": v=" + std::to_string(v) +
                          " but e+ + e- = " + std::to_string(plus + minus));
      }
      if (plus > kMaxCount || minus > kMaxCount || v > kMaxCount) {
        throw DecodeError("count overflow at cell " + cell_name(static_cast<int>(t), y));
      }
      r.cells[i] = Cell{static_cast<std::uint32_t>(plus), static_cast<std::uint32_t>(minus)};
    }
  }
  if (in.remaining() != 0) throw DecodeError("trailing bytes after last row");
  try {
    return Environment(static_cast<int>(horizon), seed, static_cast<Measure>(measure_byte), std::move(rows));
  } catch (const DecodeError&) {
    throw;
  } catch (const EnvironmentError& e) {
    throw DecodeError(e.what());
  }
}

Environment deserialize(std::istream& in) {
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

}  // namespace rms
