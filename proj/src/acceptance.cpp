#include "rms/acceptance.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>

#include "rms/environment.hpp"
#include "rms/estimators.hpp"
#include "rms/harness.hpp"
#include "rms/mass_kernel.hpp"
#include "rms/rwre.hpp"

namespace rms {

namespace fs = std::filesystem;

Scale scale_from_string(const std::string& s) {
  if (s == "reduced") return Scale::reduced;
  if (s == "full") return Scale::full;
  throw ConfigError("unknown scale '" + s + "' (reduced or full)");
}

nlohmann::json to_json(const std::vector<CriterionResult>& results) {
  nlohmann::json arr = nlohmann::json::array();
  bool all = true;
  for (const auto& r : results) {
    all = all && r.passed;
    arr.push_back({{"id", r.id}, {"name", r.name}, {"passed", r.passed}, {"detail", r.detail}, {"seconds", r.seconds}});
  }
  return {{"schema", "rms.selftest/1"}, {"all_passed", all}, {"criteria", arr}};
}

namespace {

std::string printf_string(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

struct Outcome {
  bool passed = false;
  std::string detail;
};

// Seeds are fixed per criterion so each check is reproducible on its own.
constexpr std::uint64_t kOracleSeed = 101;
constexpr std::uint64_t kHeatKernelSeed = 202;
constexpr std::uint64_t kConservationSeed = 303;
constexpr std::uint64_t kAnnealedSeed = 404;
constexpr std::uint64_t kIdentitySeed = 505;
constexpr std::uint64_t kSweepSeed = 606;
constexpr std::uint64_t kTransitionSeed = 707;
constexpr std::uint64_t kTauSeed = 909;
constexpr std::uint64_t kCltSeed = 3;

Outcome oracle_equivalence(Scale scale) {
  const int envs = scale == Scale::full ? 100 : 25;
  double worst = 0.0;
  for (int r = 0; r < envs; ++r) {
    const Environment env = generate(EnvSeedSpec{kOracleSeed, 10, Measure::size_biased, static_cast<std::uint64_t>(r)});
    const MassField field = mass_run(env, 10);
    for (int t = 0; t <= 10; ++t) {
      for (int y = -t; y <= t; y += 2) {
        worst = std::max(worst, std::abs(field.row(t).at(y) - path_sum_oracle(env, t, y)));
      }
    }
  }
  return {worst < 1e-12, printf_string("max |DP - path sum| = %.3g over %d envs, t <= 10", worst, envs)};
}

Outcome heat_kernel(Scale) {
  constexpr int kT = 12;
  constexpr std::uint64_t kWalks = 1000000;
  const Environment env = generate(EnvSeedSpec{kHeatKernelSeed, kT, Measure::size_biased, 0});
  const MassField field = mass_run(env, kT);
  const MassRow& row = field.row(kT);
  std::vector<std::uint64_t> hits(row.mass.size(), 0);
  Xoshiro256pp rng(walk_key(kHeatKernelSeed, 0, 0));
  for (std::uint64_t w = 0; w < kWalks; ++w) {
    SpaceTime at{0, 0};
    for (int k = 0; k < kT; ++k) at = walk_step(env, at, rng.uniform());
    ++hits[static_cast<std::size_t>((at.y + kT) / 2)];
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < hits.size(); ++i) {
    tv += std::abs(static_cast<double>(hits[i]) / kWalks - row.mass[i]);
  }
  tv *= 0.5;
  return {tv < 0.005, printf_string("TV(empirical X_12, p(12,.)) = %.5f with 1e6 walks", tv)};
}

Outcome conservation(Scale) {
  constexpr int kT = 10000;
  double worst = 0.0;
  for (int r = 0; r < 10; ++r) {
    ConeStream env(EnvSeedSpec{kConservationSeed, kT, Measure::size_biased, static_cast<std::uint64_t>(r)},
                   Sublattice::walk);
    MassSweep sweep;
    for (int t = 0; t < kT; ++t) {
      if (t > 0) env.advance();
      sweep.step(env.walk_row());
      worst = std::max(worst, std::abs(sweep.total_mass() - 1.0));
    }
  }
  return {worst < 1e-9, printf_string("max |sum p(t,.) - 1| = %.3g for t <= 1e4 on 10 envs", worst)};
}

Outcome annealed(Scale, unsigned threads) {
  const AnnealedCheck a = annealed_mean_check(EnsembleSpec{kAnnealedSeed, 100000, threads}, 8);
  return {a.max_abs_z() < 4.0, printf_string("max |z| = %.3f over %zu sites, n = 8, 1e5 envs", a.max_abs_z(),
                                             a.cells.size())};
}

Outcome identity(Scale, unsigned threads) {
  const std::vector<int> grid{16};
  const MomentCurve c = moment_curve(EnsembleSpec{kIdentitySeed, 100000, threads}, grid);
  const MomentPoint& p = c.points.front();
  return {p.overlap, printf_string("M(16) = %.4f [%.4f, %.4f], B(16) = %.4f [%.4f, %.4f]", p.squared_mean.mean,
                                   p.squared_mean.ci_lo(), p.squared_mean.ci_hi(), p.weighted_sum.mean,
                                   p.weighted_sum.ci_lo(), p.weighted_sum.ci_hi())};
}

Outcome transitions(Scale, unsigned threads) {
  const TransitionTally t = separation_trials(EnsembleSpec{kTransitionSeed, 2000, threads}, 256);
  const double n = static_cast<double>(t.off_zero_total());
  bool ok = n >= 1e5;
  std::ostringstream detail;
  detail << printf_string("%.0f off-zero transitions", n);
  const double expected[3] = {0.25, 0.5, 0.25};
  const std::uint64_t counts[3] = {t.off_zero_down, t.off_zero_stay, t.off_zero_up};
  for (int k = 0; k < 3; ++k) {
    const double f = counts[k] / n;
    const double z = (f - expected[k]) / std::sqrt(expected[k] * (1 - expected[k]) / n);
    ok = ok && std::abs(z) <= 3.0;
    detail << printf_string("; %+d: %.4f (z=%.2f)", 2 * k - 2, f, z);
  }
  for (std::uint32_t v = 1; v <= 3; ++v) {
    const auto it = t.at_zero.find(v);
    if (it == t.at_zero.end() || it->second.total() == 0) {
      ok = false;
      detail << printf_string("; v=%u: no meetings", v);
      continue;
    }
    const double total = static_cast<double>(it->second.total());
    const double f = it->second.stay / total;
    const double target = 0.5 * (1.0 + 1.0 / v);
    const double sigma = std::sqrt(target * (1 - target) / total);
    // sigma = 0 at v = 1: the stay must then be certain.
    const bool within = sigma > 0 ? std::abs(f - target) <= 3 * sigma : f == target;
    ok = ok && within;
    detail << printf_string("; stay|v=%u: %.4f vs %.4f (%llu)", v, f, target,
                            static_cast<unsigned long long>(it->second.total()));
  }
  const StayLeave pooled = t.pooled_at_zero(2);
  const double pn = static_cast<double>(pooled.total());
  const double pf = pn > 0 ? pooled.stay / pn : 1.0;
  const bool pooled_ok = pn > 0 && pf <= 0.75 + 3 * std::sqrt(0.75 * 0.25 / pn);
  ok = ok && pooled_ok;
  detail << printf_string("; pooled v>=2 stay %.4f", pf);
  return {ok, detail.str()};
}

Outcome tau_tail(Scale, unsigned threads) {
  const TailCurve c = tau0_curve(EnsembleSpec{kTauSeed, 100000, threads}, 400);
  StretchedExpFit f;
  try {
    f = fit_stretched_exponential(c, 25, 400);
  } catch (const EstimatorError& e) {
    return {false, e.what()};
  }
  return {f.b > 0 && f.r2 > 0.9,
          printf_string("log S(t) ~ %.3f - %.3f sqrt(t), R^2 = %.4f over %zu thresholds in [25,400], 1e5 walks", f.a,
                        f.b, f.r2, f.points)};
}

Outcome clt(Scale) {
  int ks_ok = 0;
  int sigma_ok = 0;
  int both = 0;
  std::ostringstream detail;
  for (int r = 0; r < 10; ++r) {
    const CltReport c = clt_report(EnvSeedSpec{kCltSeed, 20000, Measure::size_biased, static_cast<std::uint64_t>(r)});
    const bool k = c.ks < 0.05;
    const bool s = c.sigma2 >= 0.9 && c.sigma2 <= 1.1;
    ks_ok += k;
    sigma_ok += s;
    both += k && s;
    detail << printf_string("%s(ks=%.3f ks_c=%.3f s2=%.3f)", r ? " " : "", c.ks, c.ks_centered, c.sigma2);
  }
  return {both >= 9, printf_string("%d/10 envs pass both (KS<0.05: %d, sigma2 in [0.9,1.1]: %d): ", both, ks_ok,
                                   sigma_ok) +
                         detail.str()};
}

std::string read_bytes(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
}

Outcome reproducibility() {
  const fs::path root = fs::temp_directory_path() /
                        ("rms-repro-" + std::to_string(std::chrono::steady_clock::now().time_since_epoch().count()));
  fs::create_directories(root / "a");
  fs::create_directories(root / "b");
  struct Job {
    std::string name;
    std::vector<std::string> args;
  };
  const std::vector<Job> jobs{
      {"env.bin", {"gen-env", "--seed", "7", "--horizon", "64", "--measure", "size-biased"}},
      {"env_walkers.bin", {"gen-env", "--seed", "7", "--horizon", "32", "--method", "walkers"}},
      {"mass.csv", {"mass", "--seed", "7", "--horizon", "64"}},
      {"walk.csv", {"walk", "--seed", "7", "--horizon", "64", "--samples", "20"}},
      {"couple.json", {"couple", "--seed", "7", "--horizon", "64", "--samples", "20"}},
      {"moment.json", {"moment", "--seed", "7", "--replicates", "300", "--grid", "16:128:x2"}},
      {"zeros.json", {"zeros", "--seed", "7", "--replicates", "300", "--grid", "16:128:x2"}},
      {"tails.json", {"tails", "--seed", "7", "--replicates", "2000", "--n", "64", "--fit-lo", "4", "--fit-hi", "64"}},
      {"annealed.json", {"annealed", "--seed", "7", "--replicates", "10000", "--n", "6"}},
      {"clt.json", {"clt", "--seed", "3", "--horizon", "2000"}},
      {"mu.json", {"mu", "--t", "100"}},
  };
  std::ostringstream detail;
  bool ok = true;
  int compared = 0;
  for (const auto& job : jobs) {
    std::string first;
    for (const char* dir : {"a", "b"}) {
      std::vector<std::string> args = job.args;
      const std::string out = (root / dir / job.name).string();
      args.insert(args.end(), {"--out", out, "--threads", dir[0] == 'a' ? "1" : "4", "--force"});
      std::ostringstream sink;
      const int code = cli_dispatch(args, sink, sink);
      if (code != 0) {
        ok = false;
        detail << job.args.front() << " exited " << code << " (" << sink.str() << "); ";
      }
    }
    const std::string a = read_bytes(root / "a" / job.name);
    const std::string b = read_bytes(root / "b" / job.name);
    if (a.empty() || a != b) {
      ok = false;
      detail << job.name << " differs; ";
    }
    ++compared;
  }
  std::error_code ec;
  fs::remove_all(root, ec);
  detail << compared << " subcommand outputs compared at --threads 1 vs 4";
  return {ok, detail.str()};
}

struct SharedSweep {
  std::vector<int> grid;
  MomentCurve moments;
  ZeroCountCurve zeros;
  std::uint64_t replicates = 0;
  double seconds = 0.0;
};

SharedSweep shared_sweep(Scale scale, unsigned threads) {
  const auto start = std::chrono::steady_clock::now();
  SharedSweep s;
  s.grid = {64, 128, 256, 512, 1024, 2048, 4096};
  s.replicates = scale == Scale::full ? 20000 : 1000;
  const EnsembleSpec ensemble{kSweepSeed, s.replicates, threads};
  std::vector<SweepSample> samples;
  samples.reserve(s.replicates);
  run_ordered<SweepSample>(
      s.replicates, threads,
      [&](std::uint64_t r) { return sweep_replicate(ensemble, r, s.grid, SweepOptions{true, true}); },
      [&](std::uint64_t, SweepSample&& x) { samples.push_back(std::move(x)); });
  s.moments = moment_curve_from(s.grid, samples);
  s.zeros = zero_count_curve_from(s.grid, samples);
  s.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return s;
}

const ZeroCountPoint& point_at(const ZeroCountCurve& c, int n) {
  for (const auto& p : c.points) {
    if (p.n == n) return p;
  }
  throw std::logic_error("grid point missing");
}

}  // namespace

std::vector<CriterionResult> run_acceptance(Scale scale, unsigned threads, std::ostream& log,
                                            const std::set<int>& only) {
  std::vector<CriterionResult> results;
  auto wanted = [&](int id) { return only.empty() || only.count(id) > 0; };
  auto report = [&](int id, const std::string& name, double budget_seconds, const std::function<Outcome()>& body) {
    if (!wanted(id)) return;
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = body();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    CriterionResult r;
    r.id = id;
    r.name = name;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.passed = o.passed;
    r.detail = o.detail;
    if (budget_seconds > 0 && r.seconds > budget_seconds) {
      r.passed = false;
      r.detail += printf_string(" [over runtime budget %.0f s]", budget_seconds);
    }
    log << printf_string("criterion %2d [%s] %s: ", id, r.passed ? "PASS" : "FAIL", name.c_str()) << r.detail
        << printf_string(" (%.1f s)", r.seconds) << std::endl;
    results.push_back(std::move(r));
  };

  report(1, "oracle equivalence", 30, [&] { return oracle_equivalence(scale); });
  report(2, "heat kernel equals mass", 120, [&] { return heat_kernel(scale); });
  report(3, "conservation", 0, [&] { return conservation(scale); });
  report(4, "annealed simple random walk", 0, [&] { return annealed(scale, threads); });
  report(5, "estimator identity M(16) vs B(16)", 0, [&] { return identity(scale, threads); });

  // 6, 8 and 10 share one coupled sweep over n = 64..4096.
  std::optional<SharedSweep> sweep;
  auto need_sweep = [&] {
    if (!sweep) sweep = shared_sweep(scale, threads);
    return *sweep;
  };
  report(6, "moment below zero count", 0, [&] {
    const SharedSweep& s = need_sweep();
    bool ok = true;
    std::string detail;
    for (int n : {64, 256, 1024}) {
      const ZeroCountPoint& p = point_at(s.zeros, n);
      ok = ok && p.ordering_holds;
      detail += printf_string("%sn=%d: M=%.2f zeros=%.2f gap=%.2f+-%.2f", detail.empty() ? "" : "; ", n,
                              p.squared_mean.mean, p.zero_count.mean, p.gap.mean, kZ95 * p.gap.std_error());
    }
    return Outcome{ok, detail + printf_string(" (%llu envs)", static_cast<unsigned long long>(s.replicates))};
  });
  report(7, "Y transition law", 0, [&] { return transitions(scale, threads); });
  report(8, "excursion count scaling", 0, [&] {
    const SharedSweep& s = need_sweep();
    double lo = 1e300;
    double hi = 0.0;
    std::string detail;
    for (int n : {256, 1024, 4096}) {
      const double ratio = point_at(s.zeros, n).excursion_ratio;
      lo = std::min(lo, ratio);
      hi = std::max(hi, ratio);
      detail += printf_string("%sa(%d)/sqrt(n)=%.4f", detail.empty() ? "" : ", ", n, ratio);
    }
    const double spread = hi / lo - 1.0;
    return Outcome{spread <= 0.25, detail + printf_string("; max/min - 1 = %.3f", spread)};
  });
  report(9, "tau_0 stretched-exponential tail", 0, [&] { return tau_tail(scale, threads); });
  report(10, "moment growth exponent", 0, [&] {
    const SharedSweep& s = need_sweep();
    const PowerFit& f = s.moments.fit;
    const bool ok = f.alpha >= 0.45 && f.alpha <= 0.80 && s.seconds <= 7200;
    return Outcome{ok, printf_string("alpha = %.4f +- %.4f (log^3-corrected %.4f) over n=64..4096, %llu envs; "
                                     "sweep %.0f s",
                                     f.alpha, f.alpha_se, f.log3_alpha, static_cast<unsigned long long>(s.replicates),
                                     s.seconds)};
  });
  report(11, "quenched CLT", 600, [&] { return clt(scale); });
  report(12, "reproducibility across thread counts", 0, [&] { return reproducibility(); });
  return results;
}

}  // namespace rms
