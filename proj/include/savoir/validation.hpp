#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "savoir/pipeline.hpp"

namespace savoir {

// One property check with its measured error (or rate) and threshold.
struct ValidationCheck {
  std::string name;
  bool passed = false;
  double measured = 0.0;
  double threshold = 0.0;
  std::string details;
  double elapsed_ms = 0.0;
};

struct ValidationOptions {
  int equivalence_seeds = 50;   // seeds per game size for equivalence + axioms
  int convergence_seeds = 30;   // permutation estimator comparison
  int fidelity_trials = 100;    // sampled-plan trials per game size
  int clt_rollouts = 400;       // rollouts per coalition in the noise check
  int clt_coalitions = 20;
  std::uint64_t seed = 1000;
  bool include_protocol = true;  // spins an in-process TCP oracle
};

// ---- fixture games ----

// Three-player worked example: the valued player is index 1 with marginal
// contributions (1.2, 0.8, 1.0, 0.6) against the empty set, {0}, {2}, and
// {0,2}. The three free coalition values f1 = v({0}), f3 = v({2}),
// f13 = v({0,2}) do not affect player 1's attribution of 0.9.
std::shared_ptr<ValueOracle> worked_example_game(double f1 = 0.5, double f3 = 0.7,
                                                 double f13 = 1.4);

// Four-player walkthrough game: a characteristic function completing five
// pinned values (v at masks 0, 2, 4, 11, 15) such that the exact attribution
// is (0.4, 0.8, 1.5, 0.3). Indexed by coalition mask.
const std::array<double, 16>& walkthrough_game_values();
std::shared_ptr<ValueOracle> walkthrough_game();

// Seeded unit-scale random game: v(S) iid uniform on [-1, 1] per mask.
std::shared_ptr<ValueOracle> random_table_game(int n, std::uint64_t seed);

// Exhaustive-row KernelSHAP on any oracle with n <= kMaxEnumerationPlayers.
ShapleyVector kernelshap_exhaustive(ValueOracle& oracle);

// ---- individual checks ----

ValidationCheck check_worked_example_exact(std::uint64_t seed = 7);
ValidationCheck check_normalization_example();
ValidationCheck check_walkthrough_kernelshap();
ValidationCheck check_kernel_weight_law();
ValidationCheck check_exhaustive_equivalence(int seeds_per_n, std::uint64_t seed0);
std::vector<ValidationCheck> check_axioms(int seeds, std::uint64_t seed0);
ValidationCheck check_permutation_convergence(int seeds, std::uint64_t seed0);
ValidationCheck check_sampled_plan_fidelity(int trials_per_n, std::uint64_t seed0);
std::vector<ValidationCheck> check_expected_utility(int rollouts, int coalitions,
                                                    std::uint64_t seed0);
std::vector<ValidationCheck> check_attribution_determinism();
std::vector<ValidationCheck> check_protocol_conformance();
ValidationCheck check_fault_injection();

std::vector<ValidationCheck> run_validation_battery(const ValidationOptions& options = {});

nlohmann::ordered_json validation_report(const std::vector<ValidationCheck>& checks);

}  // namespace savoir
