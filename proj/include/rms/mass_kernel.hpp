#ifndef RMS_MASS_KERNEL_HPP
#define RMS_MASS_KERNEL_HPP

#include <cmath>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <vector>

#include "rms/environment.hpp"

namespace rms {

class MassError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Neumaier compensated sum.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

/// Mass at time t on the reachable sites: mass[i] sits at y = 2i - t.
struct MassRow {
  int t = 0;
  std::vector<double> mass;

  double at(int y) const;
  double total() const;
};

struct MassField {
  std::vector<MassRow> rows;  // rows[t] for t = 0..horizon

  int horizon() const { return static_cast<int>(rows.size()) - 1; }
  const MassRow& row(int t) const { return rows.at(static_cast<std::size_t>(t)); }
};

struct QuenchedMoments {
  int horizon = 0;
  double mean_displacement = 0.0;  // m(n) = sum_y y p(n,y)
  double zero_weighted_sum = 0.0;  // B(n) = sum_{i<n} sum_y p(i,y)^2 / v(i,y)
  double collision_sum = 0.0;      // Z(n) = sum_{i<n} sum_y p(i,y)^2
};

/// One mass-splitting step on the walk sublattice.
///
/// `mass` and `cells` describe row t (t+1 sites); `next` receives row t+1
/// (t+2 sites). A source cell with v = 0 contributes nothing.
void mass_step(std::span<const double> mass, std::span<const Cell> cells, std::span<double> next);
MassRow mass_step(const MassRow& row, std::span<const Cell> cells);

/// Full field for t = 0..n. Requires v(0,0) >= 1.
MassField mass_run(const Environment& env, int n);

/// Sum over all nearest-neighbour paths from (0,0) to (t,y) of the product
/// of crossing fractions. Exponential in t; limited to t <= 16.
double path_sum_oracle(const Environment& env, int t, int y);

/// (e+ - e-) / v at a cell; throws MassError on an empty cell.
double local_drift(const Cell& cell);
double local_drift(const Environment& env, int t, int y);

QuenchedMoments quenched_moments(const Environment& env, int n);

/// Streaming sweep: holds only the current row and the running B and Z sums.
class MassSweep {
 public:
  MassSweep();

  int time() const { return t_; }
  std::span<const double> mass() const { return mass_; }

  /// Consumes the environment row at the current time and moves to t+1.
  void step(std::span<const Cell> cells);

  QuenchedMoments moments() const;
  double total_mass() const;
  double second_moment() const;  // sum_y y^2 p(t,y)

 private:
  int t_ = 0;
  std::vector<double> mass_;
  std::vector<double> next_;
  CompensatedSum weighted_;
  CompensatedSum collision_;
};

// CSV with header "t,y,p"; one line per reachable site.
void write_mass_csv(const MassField& field, std::ostream& out);

// Binary rows: "RMSMASS1", then per row u32 t, u32 count, count f64 (LE).
void write_mass_binary(const MassField& field, std::ostream& out);
MassField read_mass_binary(std::istream& in);

}  // namespace rms

#endif
