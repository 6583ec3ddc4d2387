#pragma once

#include "json.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace tdvcl {

struct CheckResult {
  std::string name;
  bool passed = false;
  /// Observed statistic (worst residual, error, ...) and the bound it was held to.
  double value = 0.0;
  double bound = 0.0;
  std::string detail;
};

struct CheckReport {
  std::string suite;
  std::vector<CheckResult> results;
  double seconds = 0.0;

  bool passed() const noexcept;
  nlohmann::json to_json() const;
};

/// Σv = 1, λ = 0 reduces to VCL weights, λ → 1 reaches n-step weights.
CheckResult check_coefficient_grid();
/// Worst |TDλ objective - normalised discounted sum of TD targets| over random small networks.
CheckResult check_compound_identity(int networks = 100);
/// NStepKL(1) and TDLambda(0) losses against VCL on identical seeds.
CheckResult check_objective_equivalences(int trials = 20);
/// Analytic gradient of an n = 3 TD(λ) objective on a [10, 10] net against central differences.
CheckResult check_objective_gradient();
/// Closed-form diagonal KL against a Monte-Carlo estimate, in standard errors.
CheckResult check_kl_monte_carlo(int pairs = 20, int draws = 1000000);
/// Sequential vs joint conjugate updates.
CheckResult check_conjugate_recursion(int streams = 20);
/// Zero-noise variational recursion against the exact trajectory.
CheckResult check_zero_noise_recursion(int streams = 10);
/// Median final KL-to-truth of n_step(3) below single_step with injected noise.
CheckResult check_compounding_error(int seeds = 30, double noise_scale = 0.1);
/// Buffer size and current-task exclusion over randomized task sequences.
CheckResult check_replay_restriction(int sequences = 200);

const std::vector<std::string>& check_suite_names();
/// ContractError for an unknown suite.
CheckReport run_check_suite(std::string_view suite);

}  // namespace tdvcl
