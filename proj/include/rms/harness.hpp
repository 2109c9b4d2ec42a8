#ifndef RMS_HARNESS_HPP
#define RMS_HARNESS_HPP

#include <cstdint>
#include <iosfwd>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace rms {

/// Bad flags, unreadable configs, invalid values and output collisions.
/// Maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitConfig = 2;

/// Every parameter that determines output bytes. Thread count, output paths
/// and --force are excluded.
struct ExperimentConfig {
  std::string command;
  nlohmann::json params = nlohmann::json::object();

  nlohmann::json to_json() const;
  std::string hash() const;  // SHA-256 of the compact JSON form
};

struct OutputRecord {
  std::string path;
  std::string sha256;
  std::uint64_t bytes = 0;
};

struct RunManifest {
  ExperimentConfig config;
  std::string code_version;
  std::string started_utc;
  std::string finished_utc;
  std::vector<OutputRecord> outputs;

  nlohmann::json to_json() const;
};

std::string sha256_hex(std::span<const std::uint8_t> bytes);
std::string sha256_hex(const std::string& bytes);
std::string code_version();

/// Parses "64:4096:x2" (geometric), "0:100:+10" (arithmetic) or "64,256,1024".
std::vector<int> parse_grid(const std::string& text);

/// Thread count from RMS_THREADS, or 1 when unset.
unsigned default_threads();

/// Path of the manifest written next to `output`.
std::string manifest_path(const std::string& output);

/// Writes `files` (final path, bytes) under a .tmp suffix, then the manifest,
/// then renames the outputs into place.
RunManifest commit_outputs(const ExperimentConfig& config, const std::vector<std::pair<std::string, std::string>>& files,
                           const std::string& started_utc);

/// Full CLI; args exclude the program name.
int cli_dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);
int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace rms

#endif
