#include "rms/mass_kernel.hpp"

#include <array>
#include <cstring>
#include <istream>
#include <iterator>
#include <ostream>
#include <string>

namespace rms {

namespace {

constexpr int kMaxOracleTime = 16;

// 1/v for the occupancies that actually occur; larger v falls back to division.
struct Reciprocals {
  std::array<double, 64> values{};
  constexpr Reciprocals() {
    for (std::size_t v = 1; v < values.size(); ++v) values[v] = 1.0 / static_cast<double>(v);
  }
  double operator()(std::uint32_t v) const { return v < values.size() ? values[v] : 1.0 / v; }
};
constexpr Reciprocals kInverse;

void check_row_sizes(std::size_t mass, std::size_t cells, std::size_t next) {
  if (cells < mass) throw MassError("support exceeds stored window: row has " + std::to_string(mass) +
                                    " sites but only " + std::to_string(cells) + " cells");
  if (next != mass + 1) throw MassError("next row must have one more site than the current row");
}

}  // namespace

double MassRow::at(int y) const {
  if (((y + t) & 1) != 0 || y < -t || y > t) return 0.0;
  return mass[static_cast<std::size_t>((y + t) / 2)];
}

double MassRow::total() const {
  CompensatedSum s;
  for (double p : mass) s.add(p);
  return s.value();
}

void mass_step(std::span<const double> mass, std::span<const Cell> cells, std::span<double> next) {
  check_row_sizes(mass.size(), cells.size(), next.size());
  std::fill(next.begin(), next.end(), 0.0);
  for (std::size_t i = 0; i < mass.size(); ++i) {
    const Cell c = cells[i];
    const std::uint32_t v = c.occupancy();
    if (v == 0 || mass[i] == 0.0) continue;
    const double share = mass[i] * kInverse(v);
    next[i] += share * c.minus;
    next[i + 1] += share * c.plus;
  }
}

MassRow mass_step(const MassRow& row, std::span<const Cell> cells) {
  MassRow out;
  out.t = row.t + 1;
  out.mass.resize(row.mass.size() + 1);
  mass_step(row.mass, cells, out.mass);
  return out;
}

namespace {

void require_origin(const Environment& env, int n) {
  if (n < 0 || n > env.horizon()) {
    throw MassError("time " + std::to_string(n) + " outside environment horizon " + std::to_string(env.horizon()));
  }
  if (env.horizon() > 0 && env.occupancy(0, 0) == 0) {
    throw MassError("v(0,0) = 0: the mass never leaves the origin (size-biased environment required)");
  }
}

}  // namespace

MassField mass_run(const Environment& env, int n) {
  require_origin(env, n);
  MassField field;
  field.rows.reserve(static_cast<std::size_t>(n) + 1);
  field.rows.push_back(MassRow{0, {1.0}});
  for (int t = 0; t < n; ++t) {
    const auto cells = env.lattice_row(t);
    field.rows.push_back(mass_step(field.rows.back(), cells));
  }
  return field;
}

double path_sum_oracle(const Environment& env, int t, int y) {
  if (t < 0 || t > kMaxOracleTime) {
    throw MassError("path-sum oracle limited to t <= " + std::to_string(kMaxOracleTime));
  }
  if (((y + t) & 1) != 0 || y < -t || y > t) return 0.0;
  // Depth-first over all 2^t step sequences that end at y.
  double total = 0.0;
  auto walk = [&](auto&& self, int time, int pos, double weight) -> void {
    if (time == t) {
      if (pos == y) total += weight;
      return;
    }
    if (std::abs(y - pos) > t - time) return;
    const Cell& c = env.at(time, pos);
    const std::uint32_t v = c.occupancy();
    if (v == 0) return;
    if (c.plus > 0) self(self, time + 1, pos + 1, weight * (static_cast<double>(c.plus) / v));
    if (c.minus > 0) self(self, time + 1, pos - 1, weight * (static_cast<double>(c.minus) / v));
  };
  walk(walk, 0, 0, 1.0);
  return total;
}

double local_drift(const Cell& cell) {
  const std::uint32_t v = cell.occupancy();
  if (v == 0) throw MassError("local drift undefined at an empty cell");
  return (static_cast<double>(cell.plus) - static_cast<double>(cell.minus)) / v;
}

double local_drift(const Environment& env, int t, int y) {
  try {
    return local_drift(env.at(t, y));
  } catch (const MassError&) {
    throw MassError("local drift undefined at empty cell (t=" + std::to_string(t) + ", y=" + std::to_string(y) + ")");
  }
}

// ---------------------------------------------------------------------------

MassSweep::MassSweep() : mass_{1.0} {}

void MassSweep::step(std::span<const Cell> cells) {
  const std::size_t n = mass_.size();
  if (cells.size() < n) {
    throw MassError("support exceeds stored window at t=" + std::to_string(t_));
  }
  next_.resize(n + 1);
  // Row terms are nonnegative, so plain row sums lose at most n ulps; rows
  // are then accumulated with compensation. 1/0 is tabulated as 0, which
  // drops the mass of an empty cell.
  double weighted_row = 0.0;
  double collision_row = 0.0;
  double carry = 0.0;  // share sent up from index i - 1
  for (std::size_t i = 0; i < n; ++i) {
    const double p = mass_[i];
    const Cell c = cells[i];
    const double share = p * kInverse(c.occupancy());
    weighted_row += p * share;
    collision_row += p * p;
    next_[i] = carry + share * c.minus;
    carry = share * c.plus;
  }
  next_[n] = carry;
  weighted_.add(weighted_row);
  collision_.add(collision_row);
  mass_.swap(next_);
  ++t_;
}

QuenchedMoments MassSweep::moments() const {
  QuenchedMoments m;
  m.horizon = t_;
  CompensatedSum mean;
  for (std::size_t i = 0; i < mass_.size(); ++i) {
    mean.add(static_cast<double>(2 * static_cast<int>(i) - t_) * mass_[i]);
  }
  m.mean_displacement = mean.value();
  m.zero_weighted_sum = weighted_.value();
  m.collision_sum = collision_.value();
  return m;
}

double MassSweep::total_mass() const {
  CompensatedSum s;
  for (double p : mass_) s.add(p);
  return s.value();
}

double MassSweep::second_moment() const {
  CompensatedSum s;
  for (std::size_t i = 0; i < mass_.size(); ++i) {
    const double y = static_cast<double>(2 * static_cast<int>(i) - t_);
    s.add(y * y * mass_[i]);
  }
  return s.value();
}

QuenchedMoments quenched_moments(const Environment& env, int n) {
  require_origin(env, n);
  MassSweep sweep;
  for (int t = 0; t < n; ++t) sweep.step(env.lattice_row(t));
  return sweep.moments();
}

// ---------------------------------------------------------------------------

void write_mass_csv(const MassField& field, std::ostream& out) {
  out << "t,y,p\n";
  char buf[64];
  for (const MassRow& row : field.rows) {
    for (std::size_t i = 0; i < row.mass.size(); ++i) {
      std::snprintf(buf, sizeof buf, "%.17g", row.mass[i]);
      out << row.t << ',' << (2 * static_cast<int>(i) - row.t) << ',' << buf << '\n';
    }
  }
}

namespace {

constexpr char kMassMagic[8] = {'R', 'M', 'S', 'M', 'A', 'S', 'S', '1'};

void put_u32(std::ostream& out, std::uint32_t x) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>(x >> (8 * i));
  out.write(b, 4);
}

}  // namespace

void write_mass_binary(const MassField& field, std::ostream& out) {
  out.write(kMassMagic, sizeof kMassMagic);
  for (const MassRow& row : field.rows) {
    put_u32(out, static_cast<std::uint32_t>(row.t));
    put_u32(out, static_cast<std::uint32_t>(row.mass.size()));
    for (double p : row.mass) {
      std::uint64_t bits;
      std::memcpy(&bits, &p, sizeof bits);
      char b[8];
      for (int i = 0; i < 8; ++i) b[i] = static_cast<char>(bits >> (8 * i));
      out.write(b, 8);
    }
  }
}

MassField read_mass_binary(std::istream& in) {
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  std::size_t pos = 0;
  auto need = [&](std::size_t n) {
    if (bytes.size() - pos < n) throw MassError("truncated mass stream");
  };
  auto u32 = [&] {
    need(4);
    std::uint32_t x = 0;
    for (int i = 0; i < 4; ++i) x |= static_cast<std::uint32_t>(bytes[pos++]) << (8 * i);
    return x;
  };
  need(sizeof kMassMagic);
  if (std::memcmp(bytes.data(), kMassMagic, sizeof kMassMagic) != 0) throw MassError("bad mass stream magic");
  pos += sizeof kMassMagic;
  MassField field;
  while (pos < bytes.size()) {
    MassRow row;
    row.t = static_cast<int>(u32());
    const std::uint32_t count = u32();
    need(std::size_t{count} * 8);
    row.mass.resize(count);
    for (auto& p : row.mass) {
      std::uint64_t bits = 0;
      for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[pos++]) << (8 * i);
      std::memcpy(&p, &bits, sizeof p);
    }
    field.rows.push_back(std::move(row));
  }
  return field;
}

}  // namespace rms
