#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "savoir/shapley.hpp"

namespace savoir {

// Regression weight for an interior coalition: (n-1) / (C(n,s) * s * (n-s)).
// Binomials come from an exact Pascal-triangle table (all entries up to
// n = 63 fit in 64 bits), so the symmetry w(n,s) == w(n,n-s) is bit-exact.
// Sizes 0 and n carry infinite weight and are handled as hard constraints by
// the solver, never as rows; asking for them is a domain error.
double shap_kernel_weight(int n, int s);

// One regression row: a sampled interior coalition, its kernel weight, its
// realized value, and how many times the sampler drew it.
struct WeightedCoalitionSample {
  Coalition coalition;
  double kernel_weight = 0.0;
  double value = 0.0;
  int multiplicity = 1;
};

struct RegressionDiagnostics {
  int num_rows = 0;
  double weighted_residual_sum_of_squares = 0.0;
  bool condition_warning = false;
  bool ridge_applied = false;
};

// An interior coalition scheduled for evaluation, with its draw count.
struct PlanEntry {
  Coalition coalition;
  int multiplicity = 1;
};

// The coalition budget for one game: mandatory extreme-size coalitions plus
// size-weighted random draws, deduplicated by mask. When 2^n fits inside the
// budget the plan enumerates every coalition instead of sampling.
struct SamplingPlan {
  int n = 0;
  int budget_k = 0;            // min(12n + 2, 200)
  std::uint64_t seed = 0;
  bool exhaustive = false;

  // Empty set, grand coalition, all singletons, all (n-1)-subsets, in that
  // order, deduplicated; 2n + 2 entries when n > 2.
  std::vector<Coalition> mandatory;
  // Distinct non-mandatory draws in draw order (ascending mask order when
  // exhaustive).
  std::vector<Coalition> sampled;
  // Every interior (0 < |S| < n) coalition of the plan exactly once, in
  // deterministic order, with draw multiplicities.
  std::vector<PlanEntry> interior;

  int num_distinct() const {
    return static_cast<int>(mandatory.size() + sampled.size());
  }
};

SamplingPlan build_sampling_plan(int n, std::uint64_t seed);

struct KernelShapSolution {
  ShapleyVector phi;
  RegressionDiagnostics diagnostics;
};

// Efficiency-constrained weighted least squares. Minimizes
//   sum_k multiplicity_k * w_k * (v(S_k) - phi_0 - sum_i z_ki phi_i)^2
// under the exact constraints phi_0 = v_empty and sum_i phi_i =
// v_full - v_empty (the infinite-weight limits of the kernel at sizes 0 and
// n). The last player's value is eliminated through the sum constraint and
// the reduced normal equations are solved by LDLT; a numerically singular
// system is retried with ridge 1e-10 * I. Throws RankDeficiencyError when
// fewer than n-1 independent rows exist.
KernelShapSolution solve_kernelshap(std::span<const WeightedCoalitionSample> rows,
                                    double v_empty, double v_full, int n);

// Evaluates the plan's interior coalitions through the cache and attaches
// kernel weights, producing the rows for solve_kernelshap.
std::vector<WeightedCoalitionSample> plan_rows(const SamplingPlan& plan,
                                               ValueOracle& oracle,
                                               ValueCache& cache);

}  // namespace savoir
