#include "rms/harness.hpp"

#include <openssl/evp.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "rms/acceptance.hpp"
#include "rms/environment.hpp"
#include "rms/estimators.hpp"
#include "rms/mass_kernel.hpp"
#include "rms/rwre.hpp"

#ifndef RMS_VERSION
#define RMS_VERSION "0.0.0"
#endif

namespace rms {

namespace fs = std::filesystem;
using nlohmann::json;

// ---------------------------------------------------------------------------
// Manifest plumbing

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int length = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), digest, &length, EVP_sha256(), nullptr) != 1) {
    throw std::runtime_error("SHA-256 digest failed");
  }
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int i = 0; i < length; ++i) {
    out += kHex[digest[i] >> 4];
    out += kHex[digest[i] & 15];
  }
  return out;
}

std::string sha256_hex(const std::string& bytes) {
  return sha256_hex(std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(bytes.data()), bytes.size()));
}

std::string code_version() { return std::string("rms ") + RMS_VERSION; }

json ExperimentConfig::to_json() const { return json{{"command", command}, {"params", params}}; }

std::string ExperimentConfig::hash() const { return sha256_hex(to_json().dump()); }

json RunManifest::to_json() const {
  json outs = json::array();
  for (const auto& o : outputs) outs.push_back({{"path", o.path}, {"sha256", o.sha256}, {"bytes", o.bytes}});
  return json{{"schema", "rms.manifest/1"},
              {"config", config.to_json()},
              {"config_hash", config.hash()},
              {"code_version", code_version},
              {"started_utc", started_utc},
              {"finished_utc", finished_utc},
              {"outputs", outs}};
}

namespace {

std::string utc_now() {
  const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  f.flush();
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

std::string tmp_path(const std::string& path) { return path + ".tmp"; }

}  // namespace

std::string manifest_path(const std::string& output) { return output + ".manifest.json"; }

RunManifest commit_outputs(const ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& files,
                           const std::string& started_utc) {
  RunManifest manifest;
  manifest.config = config;
  manifest.code_version = code_version();
  manifest.started_utc = started_utc;
  for (const auto& [path, bytes] : files) {
    write_file(tmp_path(path), bytes);
    manifest.outputs.push_back(OutputRecord{path, sha256_hex(bytes), bytes.size()});
  }
  manifest.finished_utc = utc_now();
  const std::string mpath = manifest_path(files.front().first);
  write_file(tmp_path(mpath), manifest.to_json().dump(2) + "\n");
  fs::rename(tmp_path(mpath), mpath);
  for (const auto& [path, bytes] : files) fs::rename(tmp_path(path), path);
  return manifest;
}

unsigned default_threads() {
  const char* env = std::getenv("RMS_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (*end != '\0' || v < 1 || v > 1024) throw ConfigError(std::string("invalid RMS_THREADS: ") + env);
  return static_cast<unsigned>(v);
}

std::vector<int> parse_grid(const std::string& text) {
  auto to_int = [&](const std::string& s) {
    std::size_t used = 0;
    int v = 0;
    try {
      v = std::stoi(s, &used);
    } catch (const std::exception&) {
      throw ConfigError("invalid grid '" + text + "'");
    }
    if (used != s.size()) throw ConfigError("invalid grid '" + text + "'");
    return v;
  };
  std::vector<int> grid;
  if (text.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ':');) parts.push_back(p);
    if (parts.size() != 3 || parts[2].size() < 2) throw ConfigError("grid must be lo:hi:xF or lo:hi:+S");
    const int lo = to_int(parts[0]);
    const int hi = to_int(parts[1]);
    const int step = to_int(parts[2].substr(1));
    if (lo < 1 || hi < lo) throw ConfigError("grid bounds must satisfy 1 <= lo <= hi");
    if (parts[2][0] == 'x') {
      if (step < 2) throw ConfigError("geometric grid factor must be >= 2");
      for (long n = lo; n <= hi; n *= step) grid.push_back(static_cast<int>(n));
    } else if (parts[2][0] == '+') {
      if (step < 1) throw ConfigError("arithmetic grid step must be >= 1");
      for (long n = lo; n <= hi; n += step) grid.push_back(static_cast<int>(n));
    } else {
      throw ConfigError("grid step must start with 'x' or '+'");
    }
  } else {
    std::stringstream ss(text);
    for (std::string p; std::getline(ss, p, ',');) grid.push_back(to_int(p));
  }
  if (grid.empty()) throw ConfigError("empty grid");
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (grid[i] < 1 || (i > 0 && grid[i] <= grid[i - 1])) {
      throw ConfigError("grid must be positive and strictly increasing");
    }
  }
  return grid;
}

// ---------------------------------------------------------------------------
// CLI

namespace {

/// JSON config files map option names (without dashes) of the active
/// subcommand to values.
class JsonConfig : public CLI::Config {
 public:
  explicit JsonConfig(std::string section) : section_(std::move(section)) {}

  std::string to_config(const CLI::App*, bool, bool, std::string) const override { return "{}"; }

  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    json j;
    try {
      input >> j;
    } catch (const json::exception& e) {
      throw CLI::ConversionError(std::string("config is not valid JSON: ") + e.what());
    }
    if (!j.is_object()) throw CLI::ConversionError("config must be a JSON object");
    std::vector<CLI::ConfigItem> items;
    for (const auto& [key, value] : j.items()) {
      CLI::ConfigItem item;
      if (!section_.empty()) item.parents = {section_};
      item.name = key;
      if (value.is_string()) {
        item.inputs = {value.get<std::string>()};
      } else if (value.is_boolean() || value.is_number()) {
        item.inputs = {value.dump()};
      } else {
        throw CLI::ConversionError("config key '" + key + "' must be a string, number or boolean");
      }
      items.push_back(std::move(item));
    }
    return items;
  }

 private:
  std::string section_;
};

struct Params {
  std::uint64_t seed = 1;
  unsigned threads = 1;
  std::string out;
  std::string format;
  bool force = false;
  int horizon = 64;
  std::string measure = "size-biased";
  std::uint64_t replicate = 0;
  std::string method = "cone";
  std::string env_path;
  int t = -1;
  int n = -1;
  std::uint64_t samples = 1;
  std::uint64_t replicates = 1000;
  std::string grid = "64:4096:x2";
  int fit_lo = 25;
  int fit_hi = 400;
  std::string scale = "reduced";
};

/// Options that enter the config hash, per subcommand.
struct Registry {
  std::vector<std::pair<std::string, std::function<json()>>> fields;

  template <typename T>
  CLI::Option* add(CLI::App* sub, const std::string& name, T& var, const std::string& desc) {
    fields.emplace_back(name, [&var] { return json(var); });
    return sub->add_option("--" + name, var, desc);
  }

  json params() const {
    json j = json::object();
    for (const auto& [k, f] : fields) j[k] = f();
    return j;
  }
};

json estimate_json(const MeanEstimate& e) {
  return json{{"mean", e.mean}, {"std_error", e.std_error()}, {"ci_lo", e.ci_lo()}, {"ci_hi", e.ci_hi()},
              {"count", e.count}};
}

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string extension_of(const std::string& path) { return fs::path(path).extension().string(); }

/// Resolves --format against the output extension; `allowed` lists the
/// formats this command can write, the first being the default.
std::string resolve_format(const Params& p, const std::vector<std::string>& allowed) {
  std::string f = p.format;
  if (f.empty()) {
    const std::string ext = extension_of(p.out);
    for (const auto& a : allowed) {
      if (ext == "." + a) f = a;
    }
    if (f.empty()) f = allowed.front();
  }
  if (std::find(allowed.begin(), allowed.end(), f) == allowed.end()) {
    std::string list;
    for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
    throw ConfigError("format '" + f + "' not supported here (choose " + list + ")");
  }
  return f;
}

Measure parse_measure(const std::string& s) {
  try {
    return measure_from_string(s);
  } catch (const std::exception&) {
    throw ConfigError("unknown measure '" + s + "'");
  }
}

EnsembleSpec ensemble_of(const Params& p) {
  if (p.replicates < 1) throw ConfigError("--replicates must be >= 1");
  return EnsembleSpec{p.seed, p.replicates, p.threads, Measure::size_biased};
}

Environment load_or_generate(const Params& p) {
  if (!p.env_path.empty()) {
    std::ifstream f(p.env_path, std::ios::binary);
    if (!f) throw ConfigError("cannot read environment file " + p.env_path);
    return deserialize(f);
  }
  if (p.horizon < 0) throw ConfigError("--horizon must be >= 0");
  const EnvSeedSpec spec{p.seed, p.horizon, parse_measure(p.measure), p.replicate};
  if (p.method == "walkers") return generate(spec);
  if (p.method == "cone") return generate_cone(spec);
  throw ConfigError("unknown method '" + p.method + "' (walkers or cone)");
}

int horizon_arg(int requested, const Environment& env, const char* flag) {
  if (requested < 0) return env.horizon();
  if (requested > env.horizon()) {
    throw ConfigError(std::string(flag) + " exceeds the environment horizon " + std::to_string(env.horizon()));
  }
  return requested;
}

std::string curve_csv_header() { return "n,estimate,ci_lo,ci_hi\n"; }

std::string curve_csv_row(int n, const MeanEstimate& e) {
  return std::to_string(n) + "," + fmt(e.mean) + "," + fmt(e.ci_lo()) + "," + fmt(e.ci_hi()) + "\n";
}

json tally_json(const TransitionTally& t) {
  json at_zero = json::array();
  for (const auto& [v, s] : t.at_zero) {
    const double expected = 0.5 * (1.0 + 1.0 / static_cast<double>(v));
    at_zero.push_back({{"v", v}, {"stay", s.stay}, {"leave", s.leave},
                       {"stay_fraction", s.total() ? static_cast<double>(s.stay) / static_cast<double>(s.total()) : 0.0},
                       {"expected", expected}});
  }
  return json{{"off_zero", {{"down", t.off_zero_down}, {"stay", t.off_zero_stay}, {"up", t.off_zero_up}}},
              {"at_zero", at_zero}};
}

json tail_json(const TailCurve& c) {
  return json{{"thresholds", c.thresholds}, {"at_least", c.at_least}, {"survival", c.survival},
              {"samples", c.samples}, {"censored", c.censored}};
}

json decomposition_json(std::uint64_t pair, const DifferenceDecomposition& d) {
  json excursions = json::array();
  for (const auto& e : d.excursions) {
    excursions.push_back({{"start", e.start}, {"end", e.end}, {"length", e.length()}, {"censored", e.censored}});
  }
  json holds = json::array();
  for (const auto& h : d.holds) {
    holds.push_back({{"start", h.start}, {"length", h.length}, {"censored", h.censored},
                     {"meeting_occupancy", h.meeting_occupancy}});
  }
  return json{{"pair", pair},
              {"horizon", d.horizon},
              {"excursion_count", d.excursion_count},
              {"zero_count", d.zero_count},
              {"max_hold", d.max_hold()},
              {"hold_sum", d.hold_sum()},
              {"sum_bound_holds", d.satisfies_sum_bound()},
              {"product_bound_holds", d.satisfies_product_bound()},
              {"excursions", excursions},
              {"holds", holds}};
}

// Each command returns the bytes of its single data output.

std::string cmd_gen_env(const Params& p) {
  if (p.out.empty()) throw ConfigError("gen-env needs --out");
  resolve_format(p, {"bin"});
  const auto bytes = serialize(load_or_generate(p));
  return std::string(bytes.begin(), bytes.end());
}

std::string cmd_mass(const Params& p) {
  const std::string format = resolve_format(p, {"csv", "json", "bin"});
  const Environment env = load_or_generate(p);
  const MassField field = mass_run(env, horizon_arg(p.t, env, "--t"));
  std::ostringstream os;
  if (format == "csv") {
    write_mass_csv(field, os);
  } else if (format == "bin") {
    write_mass_binary(field, os);
  } else {
    json rows = json::array();
    for (const auto& r : field.rows) rows.push_back({{"t", r.t}, {"lo", -r.t}, {"p", r.mass}});
    os << json{{"schema", "rms.mass/1"}, {"horizon", field.horizon()}, {"rows", rows}}.dump() << "\n";
  }
  return os.str();
}

std::string cmd_walk(const Params& p) {
  const std::string format = resolve_format(p, {"csv", "json"});
  const Environment env = load_or_generate(p);
  const int n = horizon_arg(p.n, env, "--n");
  std::ostringstream os;
  json paths = json::array();
  if (format == "csv") os << "sample,t,y\n";
  for (std::uint64_t s = 0; s < p.samples; ++s) {
    const auto ys = sample_walk(env, n, walk_key(env.seed(), p.replicate, s)).positions();
    if (format == "csv") {
      for (std::size_t t = 0; t < ys.size(); ++t) os << s << "," << t << "," << ys[t] << "\n";
    } else {
      paths.push_back(ys);
    }
  }
  if (format == "json") os << json{{"schema", "rms.walk/1"}, {"horizon", n}, {"paths", paths}}.dump() << "\n";
  return os.str();
}

std::string cmd_couple(const Params& p) {
  const std::string format = resolve_format(p, {"csv", "json"});
  const Environment env = load_or_generate(p);
  const int n = horizon_arg(p.n, env, "--n");
  std::ostringstream os;
  json records = json::array();
  if (format == "csv") os << "pair,i,y_X,y_Xtilde,Y,v_at_X\n";
  for (std::uint64_t k = 0; k < p.samples; ++k) {
    const CoupledPaths c =
        sample_coupled(env, n, walk_key(env.seed(), p.replicate, 2 * k), walk_key(env.seed(), p.replicate, 2 * k + 1));
    const auto x = c.first.positions();
    const auto xt = c.second.positions();
    const auto y = c.difference();
    if (format == "csv") {
      for (std::size_t i = 0; i < y.size(); ++i) {
        os << k << "," << i << "," << x[i] << "," << xt[i] << "," << y[i] << ",";
        if (i < c.occupancy.size()) os << c.occupancy[i];
        os << "\n";
      }
    } else {
      records.push_back(decomposition_json(k, decompose(y, c.occupancy)));
    }
  }
  if (format == "json") os << json{{"schema", "rms.couple/1"}, {"pairs", records}}.dump() << "\n";
  return os.str();
}

std::string cmd_moment(const Params& p) {
  const std::string format = resolve_format(p, {"json", "csv"});
  const auto grid = parse_grid(p.grid);
  const MomentCurve c = moment_curve(ensemble_of(p), grid);
  std::ostringstream os;
  if (format == "csv") {
    os << curve_csv_header();
    for (const auto& pt : c.points) os << curve_csv_row(pt.n, pt.squared_mean);
    return os.str();
  }
  json points = json::array();
  bool all_overlap = true;
  for (const auto& pt : c.points) {
    all_overlap = all_overlap && pt.overlap;
    points.push_back({{"n", pt.n}, {"squared_mean", estimate_json(pt.squared_mean)},
                      {"weighted_sum", estimate_json(pt.weighted_sum)},
                      {"collision_sum", estimate_json(pt.collision_sum)}, {"ci_overlap", pt.overlap}});
  }
  os << json{{"schema", "rms.moment/1"},
             {"replicates", c.replicates},
             {"alpha", c.fit.alpha},
             {"alpha_se", c.fit.alpha_se},
             {"log3_alpha", c.fit.log3_alpha},
             {"log3_alpha_se", c.fit.log3_alpha_se},
             {"fit_min_n", 64},
             {"all_ci_overlap", all_overlap},
             {"points", points}}
            .dump(2)
     << "\n";
  return os.str();
}

std::string cmd_zeros(const Params& p) {
  const std::string format = resolve_format(p, {"json", "csv"});
  const auto grid = parse_grid(p.grid);
  const ZeroCountCurve c = zero_count_curve(ensemble_of(p), grid);
  std::ostringstream os;
  if (format == "csv") {
    os << curve_csv_header();
    for (const auto& pt : c.points) os << curve_csv_row(pt.n, pt.zero_count);
    return os.str();
  }
  json points = json::array();
  for (const auto& pt : c.points) {
    points.push_back({{"n", pt.n},
                      {"zero_count", estimate_json(pt.zero_count)},
                      {"squared_mean", estimate_json(pt.squared_mean)},
                      {"gap", estimate_json(pt.gap)},
                      {"excursion_count", estimate_json(pt.excursion_count)},
                      {"excursion_ratio", pt.excursion_ratio},
                      {"ordering_holds", pt.ordering_holds}});
  }
  os << json{{"schema", "rms.zeros/1"},
             {"replicates", c.replicates},
             {"excursion_ratio_spread", c.excursion_ratio_spread()},
             {"points", points},
             {"transitions", tally_json(c.transitions)}}
            .dump(2)
     << "\n";
  return os.str();
}

std::string cmd_tails(const Params& p) {
  const std::string format = resolve_format(p, {"json", "csv"});
  const int n = p.n < 0 ? 400 : p.n;
  const HoldingTail h = holding_tail(ensemble_of(p), n, p.fit_lo, p.fit_hi);
  std::ostringstream os;
  if (format == "csv") {
    os << curve_csv_header();
    const double count = static_cast<double>(h.tau0.samples);
    for (std::size_t i = 0; i < h.tau0.thresholds.size(); ++i) {
      const double s = h.tau0.survival[i];
      const double half = kZ95 * std::sqrt(s * (1.0 - s) / count);
      os << h.tau0.thresholds[i] << "," << fmt(s) << "," << fmt(std::max(0.0, s - half)) << ","
         << fmt(std::min(1.0, s + half)) << "\n";
    }
    return os.str();
  }
  os << json{{"schema", "rms.tails/1"},
             {"horizon", h.horizon},
             {"tau0", tail_json(h.tau0)},
             {"tau0_fit",
              {{"a", h.tau0_fit.a}, {"b", h.tau0_fit.b}, {"b_se", h.tau0_fit.b_se}, {"r2", h.tau0_fit.r2},
               {"points", h.tau0_fit.points}, {"lo", p.fit_lo}, {"hi", p.fit_hi}}},
             {"max_hold", tail_json(h.max_hold)},
             {"median_max_hold_over_log3", h.median_max_hold_over_log3}}
            .dump()
     << "\n";
  return os.str();
}

std::string cmd_annealed(const Params& p) {
  const std::string format = resolve_format(p, {"json", "csv"});
  const int n = p.n < 0 ? 8 : p.n;
  const AnnealedCheck a = annealed_mean_check(ensemble_of(p), n);
  std::ostringstream os;
  if (format == "csv") {
    os << "y,estimate,ci_lo,ci_hi,target,z\n";
    for (const auto& c : a.cells) {
      os << c.y << "," << fmt(c.estimate.mean) << "," << fmt(c.estimate.ci_lo()) << "," << fmt(c.estimate.ci_hi())
         << "," << fmt(c.target) << "," << fmt(c.z) << "\n";
    }
    return os.str();
  }
  json cells = json::array();
  for (const auto& c : a.cells) {
    cells.push_back({{"y", c.y}, {"target", c.target}, {"estimate", estimate_json(c.estimate)}, {"z", c.z}});
  }
  os << json{{"schema", "rms.annealed/1"}, {"n", a.n}, {"replicates", a.replicates}, {"max_abs_z", a.max_abs_z()},
             {"cells", cells}}
            .dump(2)
     << "\n";
  return os.str();
}

std::string cmd_clt(const Params& p) {
  const std::string format = resolve_format(p, {"json", "csv"});
  if (p.horizon < 0) throw ConfigError("--horizon must be >= 0");
  const EnvSeedSpec spec{p.seed, p.horizon, Measure::size_biased, p.replicate};
  const CltReport r = clt_report(spec, format == "csv");
  std::ostringstream os;
  if (format == "csv") {
    os << "x,cdf,normal_cdf\n";
    for (std::size_t i = 0; i < r.points.size(); ++i) {
      os << fmt(r.points[i]) << "," << fmt(r.cdf[i]) << "," << fmt(normal_cdf(r.points[i])) << "\n";
    }
    return os.str();
  }
  os << json{{"schema", "rms.clt/1"},
             {"horizon", r.horizon},
             {"seed", p.seed},
             {"replicate", p.replicate},
             {"ks", r.ks},
             {"ks_centered", r.ks_centered},
             {"sigma2", r.sigma2},
             {"mean_displacement", r.mean_displacement},
             {"total_mass", r.total_mass},
             {"thresholds",
              {{"ks_max", 0.05}, {"sigma2_lo", 0.9}, {"sigma2_hi", 1.1}, {"origin", "artifact decision"}}},
             {"ks_ok", r.ks < 0.05},
             {"sigma2_ok", r.sigma2 >= 0.9 && r.sigma2 <= 1.1}}
            .dump(2)
     << "\n";
  return os.str();
}

std::string cmd_mu(const Params& p, std::ostream& out) {
  if (p.t < 0) throw ConfigError("mu needs --t >= 0");
  const double mu = mu_t_exact(p.t);
  out << fmt(mu) << "\n";
  if (p.out.empty()) return {};
  const std::string format = resolve_format(p, {"json", "csv"});
  if (format == "csv") return "t,mu\n" + std::to_string(p.t) + "," + fmt(mu) + "\n";
  return json{{"schema", "rms.mu/1"}, {"t", p.t}, {"mu", mu}}.dump(2) + "\n";
}

void check_collision(const Params& p) {
  if (p.out.empty() || p.force) return;
  if (fs::exists(p.out) || fs::exists(manifest_path(p.out))) {
    throw ConfigError("output " + p.out + " exists (use --force to overwrite)");
  }
}

}  // namespace

int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  Params p;
  CLI::App app{"Random mass-splitting and space-time random environment simulator", "rms"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonConfig>(args.empty() ? "" : args.front()));
  app.set_config("--config", "", "JSON file of option values; command-line flags win");
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::map<std::string, Registry> registries;
  auto sub = [&](const std::string& name, const std::string& desc) {
    CLI::App* s = app.add_subcommand(name, desc);
    s->fallthrough();
    s->add_option("--threads", p.threads, "worker threads (default: RMS_THREADS or 1)");
    s->add_option("--out", p.out, "output file; a manifest is written next to it");
    s->add_option("--format", p.format, "output format");
    s->add_flag("--force", p.force, "overwrite existing outputs");
    registries[name].add(s, "seed", p.seed, "top-level seed");
    return std::pair<CLI::App*, Registry*>{s, &registries[name]};
  };
  auto env_options = [&](CLI::App* s, Registry& r) {
    r.add(s, "env", p.env_path, "read the environment from a file instead of generating it");
    r.add(s, "horizon", p.horizon, "environment horizon T");
    r.add(s, "measure", p.measure, "base or size-biased");
    r.add(s, "replicate", p.replicate, "replicate index");
    r.add(s, "method", p.method, "walkers (direct construction) or cone (light-cone sampler)");
  };

  try {
    p.threads = default_threads();
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  {
    auto [s, r] = sub("gen-env", "generate an environment file");
    env_options(s, *r);
  }
  {
    auto [s, r] = sub("mass", "mass field p(t, y) by dynamic programming");
    env_options(s, *r);
    r->add(s, "t", p.t, "last time (default: horizon)");
  }
  {
    auto [s, r] = sub("walk", "sample quenched walks");
    env_options(s, *r);
    r->add(s, "n", p.n, "walk length (default: horizon)");
    r->add(s, "samples", p.samples, "number of walks");
  }
  {
    auto [s, r] = sub("couple", "coupled walk pairs and their difference decompositions");
    env_options(s, *r);
    r->add(s, "n", p.n, "walk length (default: horizon)");
    r->add(s, "samples", p.samples, "number of pairs");
  }
  {
    auto [s, r] = sub("moment", "moment curve of the quenched mean displacement");
    r->add(s, "replicates", p.replicates, "environments");
    r->add(s, "grid", p.grid, "n grid, e.g. 64:4096:x2");
  }
  {
    auto [s, r] = sub("zeros", "zero counts and excursion counts of coupled pairs");
    r->add(s, "replicates", p.replicates, "environments");
    r->add(s, "grid", p.grid, "n grid, e.g. 64:4096:x2");
  }
  {
    auto [s, r] = sub("tails", "tau_0 and longest-hold survival curves");
    r->add(s, "replicates", p.replicates, "environments");
    r->add(s, "n", p.n, "horizon (default 400)");
    r->add(s, "fit-lo", p.fit_lo, "smallest threshold in the tail fit");
    r->add(s, "fit-hi", p.fit_hi, "largest threshold in the tail fit");
  }
  {
    auto [s, r] = sub("annealed", "annealed law of p(n, .) against the binomial");
    r->add(s, "replicates", p.replicates, "environments");
    r->add(s, "n", p.n, "time (default 8)");
  }
  {
    auto [s, r] = sub("clt", "quenched CLT report for one environment");
    r->add(s, "horizon", p.horizon, "time T");
    r->add(s, "replicate", p.replicate, "replicate index");
  }
  {
    auto [s, r] = sub("mu", "exact mu_t");
    r->add(s, "t", p.t, "time t");
  }
  {
    auto [s, r] = sub("selftest", "acceptance checks");
    r->add(s, "scale", p.scale, "reduced or full");
  }

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  }

  CLI::App* active = app.get_subcommands().front();
  const std::string command = active->get_name();
  ExperimentConfig config{command, registries[command].params()};
  const std::string started = utc_now();

  try {
    if (p.threads < 1) throw ConfigError("--threads must be >= 1");
    check_collision(p);
    std::string bytes;
    if (command == "gen-env") {
      bytes = cmd_gen_env(p);
    } else if (command == "mass") {
      bytes = cmd_mass(p);
    } else if (command == "walk") {
      bytes = cmd_walk(p);
    } else if (command == "couple") {
      bytes = cmd_couple(p);
    } else if (command == "moment") {
      bytes = cmd_moment(p);
    } else if (command == "zeros") {
      bytes = cmd_zeros(p);
    } else if (command == "tails") {
      bytes = cmd_tails(p);
    } else if (command == "annealed") {
      bytes = cmd_annealed(p);
    } else if (command == "clt") {
      bytes = cmd_clt(p);
    } else if (command == "mu") {
      bytes = cmd_mu(p, out);
      if (p.out.empty()) return kExitOk;
    } else if (command == "selftest") {
      resolve_format(p, {"json"});
      const auto results = run_acceptance(scale_from_string(p.scale), p.threads, out);
      bool ok = true;
      for (const auto& r : results) ok = ok && r.passed;
      if (!p.out.empty()) commit_outputs(config, {{p.out, to_json(results).dump(2) + "\n"}}, started);
      return ok ? kExitOk : kExitRuntime;
    }
    if (p.out.empty()) {
      out << bytes;
    } else {
      commit_outputs(config, {{p.out, bytes}}, started);
    }
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return cli_dispatch(args, out, err);
}

}  // namespace rms
