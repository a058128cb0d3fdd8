#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace bregprior {

struct CheckResult {
  std::string name;
  bool passed = false;
  double value = 0.0;      ///< measured error
  double tolerance = 0.0;
  std::string detail;
};

struct SelfCheckOptions {
  std::uint64_t seed = 2024;
  /// Negates the convolution adjoint inside the dot test (fault fixture).
  bool inject_adjoint_sign_fault = false;
  std::size_t sgld_steps = 20000;
};

std::vector<CheckResult> run_self_checks(const SelfCheckOptions& options = {});

/// Fixed-width table, one row per check, with a closing summary line.
void print_check_table(const std::vector<CheckResult>& results, std::ostream& out);

}  // namespace bregprior
