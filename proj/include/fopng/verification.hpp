#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fopng::verification {

struct CheckResult {
  std::string name;
  bool pass = false;
  double measured = 0.0;   // worst observed error (or slope, where noted)
  double threshold = 0.0;
  double elapsed_seconds = 0.0;
  std::string detail;
};

/// The oracle-backed checks: closed forms vs the numeric constrained
/// optimizer, Fisher-orthogonality and trust-region invariants, the two
/// theorem checks, finite-difference gradient agreement, and the reduction
/// identities. Deterministic in the seed.
std::vector<CheckResult> run_oracle_suite(std::uint64_t seed = 2026);

/// One line per check; returns true when everything passed.
bool print_report(const std::vector<CheckResult>& results, std::ostream& os);

}  // namespace fopng::verification
