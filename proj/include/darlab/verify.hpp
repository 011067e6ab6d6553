#pragma once

// Invariant registry behind the `verify` subcommand: every module invariant
// runs at a chosen instance scale and reports a machine-readable result.

#include <string>
#include <vector>

namespace darlab {

enum class VerifyScale { kQuick, kFull };

struct CheckResult {
  std::string name;
  bool pass = false;
  double discrepancy = 0.0;  // worst measured violation
  double tolerance = 0.0;
  std::string detail;  // instance seeds for replay, counts, notes
};

struct VerifyReport {
  std::vector<CheckResult> checks;

  int failures() const {
    int n = 0;
    for (const auto& c : checks) n += c.pass ? 0 : 1;
    return n;
  }
};

VerifyReport verify_all(VerifyScale scale);

std::string verify_report_to_json(const VerifyReport& report);

}  // namespace darlab
