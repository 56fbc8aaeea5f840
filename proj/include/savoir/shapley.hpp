#pragma once

#include <Eigen/Dense>
#include <cstdint>

#include "savoir/game.hpp"

namespace savoir {

// Per-player attribution for one game, with the baselines it was computed
// against. For exact solvers values.sum() == v_full - v_empty up to
// floating-point summation error.
struct ShapleyVector {
  Eigen::VectorXd values;
  double v_empty = 0.0;
  double v_full = 0.0;

  int n() const { return static_cast<int>(values.size()); }
  double efficiency_gap() const { return values.sum() - (v_full - v_empty); }
};

// Exact Shapley values by one pass over all 2^n coalitions: each v(S) is
// scattered into every marginal term it participates in, with coefficients
// |S|!(n-|S|-1)!/n! precomputed as exact integer ratios. Requires
// n <= kMaxEnumerationPlayers. Every coalition is evaluated at most once
// through the cache.
ShapleyVector exact_shapley(ValueOracle& oracle, ValueCache& cache);
ShapleyVector exact_shapley(ValueOracle& oracle);

// Monte-Carlo estimate: averages each player's marginal contribution when it
// joins its predecessors in uniformly random permutations (Fisher-Yates
// shuffles of the player list). Unbiased for the exact value; coalition
// values are cached across permutations.
ShapleyVector permutation_shapley(ValueOracle& oracle, int num_permutations,
                                  std::uint64_t seed, ValueCache& cache);
ShapleyVector permutation_shapley(ValueOracle& oracle, int num_permutations,
                                  std::uint64_t seed);

}  // namespace savoir
