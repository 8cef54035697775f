#pragma once

#include <string>
#include <vector>

namespace stmt {

struct CheckResult {
  std::string name;
  bool pass = false;
  std::string detail;
};

// Built-in verification groups, runnable from the CLI and the acceptance
// harness. Each returns one result per named check.
std::vector<CheckResult> check_gradients();        // FD checks, every op + full module
std::vector<CheckResult> check_module_identity();  // zeroed-path / disabled-flag identities
std::vector<CheckResult> check_memory_pipeline();  // restore/reshape/ROI exactness
std::vector<CheckResult> check_metrics();          // metric closed-form oracles

// All groups in order; pass iff every check passes.
std::vector<CheckResult> run_selftest();

}  // namespace stmt
