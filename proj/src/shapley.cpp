#include "savoir/shapley.hpp"

#include <numeric>
#include <vector>

namespace savoir {

namespace {

std::uint64_t factorial_u64(int k) {
  std::uint64_t f = 1;
  for (int i = 2; i <= k; ++i) f *= static_cast<std::uint64_t>(i);
  return f;  // exact for k <= 20
}

}  // namespace

ShapleyVector exact_shapley(ValueOracle& oracle, ValueCache& cache) {
  const int n = oracle.num_players();
  if (n < 1) throw Error("oracle reports no players");
  if (n > kMaxEnumerationPlayers)
    throw BudgetError("exact_shapley limited to n <= " +
                      std::to_string(kMaxEnumerationPlayers) + ", got n = " +
                      std::to_string(n));

  // coeff[s] = s!(n-1-s)!/n!, the weight of a size-s sub-coalition.
  const double n_fact = static_cast<double>(factorial_u64(n));
  std::vector<double> coeff(n);
  for (int s = 0; s < n; ++s)
    coeff[s] = static_cast<double>(factorial_u64(s) * factorial_u64(n - 1 - s)) / n_fact;

  // Each v(S) appears as the "joined" term for every i in S and as the
  // "before" term for every i not in S. Long-double accumulators keep the
  // efficiency identity tight at n = 20 (2^20 summands per player).
  std::vector<long double> acc(n, 0.0L);
  const std::uint64_t full = Coalition::grand(n).mask();
  for (std::uint64_t mask = 0; mask <= full; ++mask) {
    const Coalition s = Coalition::from_mask(mask);
    const double v = evaluate_cached(oracle, s, cache);
    const int size = s.size();
    for (int i = 0; i < n; ++i) {
      if (s.contains(i))
        acc[i] += static_cast<long double>(coeff[size - 1]) * v;
      else
        acc[i] -= static_cast<long double>(coeff[size]) * v;
    }
  }

  ShapleyVector out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i) out.values[i] = static_cast<double>(acc[i]);
  out.v_empty = cache.lookup(0)->value;
  out.v_full = cache.lookup(full)->value;
  return out;
}

ShapleyVector exact_shapley(ValueOracle& oracle) {
  ValueCache cache;
  return exact_shapley(oracle, cache);
}

ShapleyVector permutation_shapley(ValueOracle& oracle, int num_permutations,
                                  std::uint64_t seed, ValueCache& cache) {
  const int n = oracle.num_players();
  if (n < 1) throw Error("oracle reports no players");
  if (num_permutations < 1) throw Error("num_permutations must be >= 1");

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Rng rng(seed);

  std::vector<long double> acc(n, 0.0L);
  for (int t = 0; t < num_permutations; ++t) {
    rng.shuffle(order);
    Coalition current = Coalition::empty_set();
    double previous = evaluate_cached(oracle, current, cache);
    for (int player : order) {
      current = current.with(player);
      const double value = evaluate_cached(oracle, current, cache);
      acc[player] += static_cast<long double>(value) - previous;
      previous = value;
    }
  }

  ShapleyVector out;
  out.values.resize(n);
  for (int i = 0; i < n; ++i)
    out.values[i] = static_cast<double>(acc[i] / num_permutations);
  out.v_empty = cache.lookup(0)->value;
  out.v_full = cache.lookup(Coalition::grand(n).mask())->value;
  return out;
}

ShapleyVector permutation_shapley(ValueOracle& oracle, int num_permutations,
                                  std::uint64_t seed) {
  ValueCache cache;
  return permutation_shapley(oracle, num_permutations, seed, cache);
}

}  // namespace savoir
