#ifndef RMS_ACCEPTANCE_HPP
#define RMS_ACCEPTANCE_HPP

#include <iosfwd>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

namespace rms {

/// full: the stated replicate counts. reduced: fewer replicates for the
/// ensemble-heavy checks, same thresholds.
enum class Scale { reduced, full };

Scale scale_from_string(const std::string& s);

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

/// Runs the acceptance checks (all when `only` is empty), printing one
/// PASS/FAIL line per criterion to `log` as it completes.
std::vector<CriterionResult> run_acceptance(Scale scale, unsigned threads, std::ostream& log,
                                            const std::set<int>& only = {});

nlohmann::json to_json(const std::vector<CriterionResult>& results);

}  // namespace rms

#endif
