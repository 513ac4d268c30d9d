#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace weightcorr {

struct SelftestOptions {
  std::uint64_t seed = 20201206;
  std::size_t cases_per_suite = 20;
  /// Negates the dg/drho bracket inside the bracket suite. Used to show
  /// the harness catches a wrong sign.
  bool flip_bracket_sign = false;
};

struct SuiteResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  std::size_t cases = 0;
  /// Seeds of the cases whose error exceeded the tolerance.
  std::vector<std::uint64_t> failing_seeds;

  bool passed() const { return failing_seeds.empty(); }
};

/// Gradient, KL-oracle and determinant-identity checks on randomised small
/// instances.
std::vector<SuiteResult> run_selftest(const SelftestOptions& options = {});

}  // namespace weightcorr
