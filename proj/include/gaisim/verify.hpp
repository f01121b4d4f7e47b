#pragma once

#include <string>
#include <vector>

namespace gaisim {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

/// Self-checks of the numerical core: closed-form oracles, finite-difference
/// gradient comparisons, channel statistics, exact bandwidth arithmetic,
/// operation-count identities, and checkpoint round trips.
std::vector<CheckResult> run_verification();

bool all_passed(const std::vector<CheckResult>& checks);

}  // namespace gaisim
