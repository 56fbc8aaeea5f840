#include <doctest.h>

#include <set>

#include "savoir/validation.hpp"
#include "support.hpp"

using namespace savoir;

namespace {

std::vector<WeightedCoalitionSample> exhaustive_rows(ValueOracle& oracle,
                                                     ValueCache& cache) {
  const int n = oracle.num_players();
  std::vector<WeightedCoalitionSample> rows;
  for (std::uint64_t mask = 1; mask < Coalition::grand(n).mask(); ++mask) {
    Coalition c = Coalition::from_mask(mask);
    rows.push_back(WeightedCoalitionSample{c, shap_kernel_weight(n, c.size()),
                                           evaluate_cached(oracle, c, cache), 1});
  }
  return rows;
}

}  // namespace

TEST_CASE("kernel weight closed-form spot values") {
  CHECK(shap_kernel_weight(4, 1) == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(shap_kernel_weight(4, 2) == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(shap_kernel_weight(2, 1) == doctest::Approx(0.5).epsilon(1e-15));
  CHECK_THROWS_AS(shap_kernel_weight(4, 0), std::domain_error);
  CHECK_THROWS_AS(shap_kernel_weight(4, 4), std::domain_error);
  CHECK_THROWS_AS(shap_kernel_weight(1, 1), std::domain_error);
}

TEST_CASE("kernel weight symmetry and extremity on a midsize game") {
  for (int s = 1; s < 9; ++s)
    CHECK(shap_kernel_weight(9, s) == shap_kernel_weight(9, 9 - s));
  CHECK(shap_kernel_weight(9, 1) > shap_kernel_weight(9, 2));
  CHECK(shap_kernel_weight(9, 2) > shap_kernel_weight(9, 4));
  CHECK(shap_kernel_weight(9, 5) < shap_kernel_weight(9, 7));
}

TEST_CASE("sampling plan goes exhaustive when the budget covers 2^n") {
  const SamplingPlan plan = build_sampling_plan(4, 99);
  CHECK(plan.budget_k == 50);
  CHECK(plan.exhaustive);
  CHECK(plan.num_distinct() == 16);
  CHECK(plan.mandatory.size() == 10);  // 2n + 2
  CHECK(plan.interior.size() == 14);   // every 0 < |S| < n coalition once
  for (const PlanEntry& entry : plan.interior) CHECK(entry.multiplicity == 1);
}

TEST_CASE("sampling plan budgets match the adaptive formula") {
  const SamplingPlan plan16 = build_sampling_plan(16, 1);
  CHECK(plan16.budget_k == 194);  // min(12*16+2, 200)
  CHECK(plan16.mandatory.size() == 34);
  CHECK_FALSE(plan16.exhaustive);

  CHECK(build_sampling_plan(20, 1).budget_k == 200);  // cap binds

  const SamplingPlan plan1 = build_sampling_plan(1, 1);
  CHECK(plan1.exhaustive);
  CHECK(plan1.mandatory.size() == 2);  // empty and grand coincide with the rest
  CHECK(plan1.interior.empty());
}

TEST_CASE("sampling plan structural invariants across sizes and seeds") {
  for (int n : {3, 7, 9, 12, 17, 30, 63}) {
    for (std::uint64_t seed : {11ull, 12ull}) {
      const SamplingPlan plan = build_sampling_plan(n, seed);
      CHECK(plan.budget_k == std::min(12 * n + 2, 200));
      CHECK(plan.num_distinct() <= plan.budget_k);

      // mandatory = empty, grand, singletons, co-singletons, deduplicated
      std::set<std::uint64_t> mandatory;
      for (const Coalition& c : plan.mandatory) {
        CHECK(PlayerSet(n).admits(c));
        CHECK(mandatory.insert(c.mask()).second);
      }
      CHECK(mandatory.contains(0));
      CHECK(mandatory.contains(Coalition::grand(n).mask()));
      for (int i = 0; i < n; ++i) {
        CHECK(mandatory.contains(Coalition::singleton(i).mask()));
        CHECK(mandatory.contains(Coalition::grand(n).without(i).mask()));
      }
      if (n > 2) CHECK(plan.mandatory.size() == static_cast<std::size_t>(2 * n + 2));

      std::set<std::uint64_t> interior;
      for (const PlanEntry& entry : plan.interior) {
        CHECK(entry.multiplicity >= 1);
        CHECK(entry.coalition.size() > 0);
        CHECK(entry.coalition.size() < n);
        CHECK(interior.insert(entry.coalition.mask()).second);
      }
    }
    // reproducibility: the plan is a pure function of (n, seed)
    const SamplingPlan a = build_sampling_plan(n, 5);
    const SamplingPlan b = build_sampling_plan(n, 5);
    REQUIRE(a.interior.size() == b.interior.size());
    for (std::size_t i = 0; i < a.interior.size(); ++i) {
      CHECK(a.interior[i].coalition == b.interior[i].coalition);
      CHECK(a.interior[i].multiplicity == b.interior[i].multiplicity);
    }
  }
}

TEST_CASE("solver matches the exact values with every interior row") {
  auto oracle = random_table_game(8, 4242);
  ValueCache cache;
  const double v_empty = evaluate_cached(*oracle, Coalition::empty_set(), cache);
  const double v_full = evaluate_cached(*oracle, Coalition::grand(8), cache);
  const auto rows = exhaustive_rows(*oracle, cache);
  const KernelShapSolution solution = solve_kernelshap(rows, v_empty, v_full, 8);
  const ShapleyVector exact = exact_shapley(*oracle, cache);
  CHECK((solution.phi.values - exact.values).cwiseAbs().maxCoeff() <= 1e-6);
  CHECK(solution.diagnostics.num_rows == 254);
  CHECK_FALSE(solution.diagnostics.ridge_applied);
}

TEST_CASE("walkthrough game reproduces the documented attribution") {
  const auto& values = walkthrough_game_values();
  CHECK(values[0b0000] == 5.0);
  CHECK(values[0b0010] == doctest::Approx(6.8).epsilon(1e-12));
  CHECK(values[0b0100] == 7.5);
  CHECK(values[0b1011] == doctest::Approx(6.8).epsilon(1e-12));
  CHECK(values[0b1111] == 8.0);

  auto oracle = walkthrough_game();
  ValueCache cache;
  const auto rows = exhaustive_rows(*oracle, cache);
  const ShapleyVector phi = solve_kernelshap(rows, values[0], values[15], 4).phi;
  Eigen::VectorXd target(4);
  target << 0.4, 0.8, 1.5, 0.3;
  CHECK((phi.values - target).cwiseAbs().maxCoeff() <= 1e-9);
  CHECK(phi.values.sum() == doctest::Approx(3.0).epsilon(1e-12));  // = v(N) - v(empty)
}

TEST_CASE("a size-symmetric game regresses to equal attributions") {
  FunctionOracle oracle(5, [](Coalition c) { return std::sqrt(1.0 + c.size()); });
  ValueCache cache;
  const auto rows = exhaustive_rows(oracle, cache);
  const ShapleyVector phi =
      solve_kernelshap(rows, evaluate_cached(oracle, Coalition::empty_set(), cache),
                       evaluate_cached(oracle, Coalition::grand(5), cache), 5)
          .phi;
  CHECK((phi.values.array() - phi.values[0]).abs().maxCoeff() <= 1e-12);
}

TEST_CASE("the efficiency constraint holds for arbitrary sampled rows") {
  Rng rng(321);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(8));
    std::vector<WeightedCoalitionSample> rows;
    for (int k = 0; k < 3 * n; ++k) {
      const int size = 1 + static_cast<int>(rng.below(n - 1));
      Coalition c;
      while (c.size() < size) c = c.with(static_cast<int>(rng.below(n)));
      rows.push_back(WeightedCoalitionSample{c, shap_kernel_weight(n, c.size()),
                                             rng.uniform(-3.0, 3.0),
                                             1 + static_cast<int>(rng.below(3))});
    }
    const double v_empty = rng.uniform(-1.0, 1.0);
    const double v_full = rng.uniform(-1.0, 1.0);
    try {
      const ShapleyVector phi = solve_kernelshap(rows, v_empty, v_full, n).phi;
      CHECK(std::abs(phi.values.sum() - (v_full - v_empty)) <= 1e-9);
    } catch (const RankDeficiencyError&) {
      // legitimate for an unlucky draw; the contract is about returned vectors
    }
  }
}

TEST_CASE("multiplicity-m rows equal m duplicated rows") {
  auto oracle = random_table_game(6, 555);
  ValueCache cache;
  auto rows = exhaustive_rows(*oracle, cache);
  rows[3].multiplicity = 4;
  rows[17].multiplicity = 2;

  std::vector<WeightedCoalitionSample> split;
  for (const auto& row : rows)
    for (int k = 0; k < row.multiplicity; ++k)
      split.push_back(WeightedCoalitionSample{row.coalition, row.kernel_weight,
                                              row.value, 1});

  const double v_empty = evaluate_cached(*oracle, Coalition::empty_set(), cache);
  const double v_full = evaluate_cached(*oracle, Coalition::grand(6), cache);
  const ShapleyVector merged = solve_kernelshap(rows, v_empty, v_full, 6).phi;
  const ShapleyVector expanded = solve_kernelshap(split, v_empty, v_full, 6).phi;
  CHECK((merged.values - expanded.values).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("rank deficiency is reported, not papered over") {
  // two distinct rows cannot identify three unknowns (n-1 = 3)
  std::vector<WeightedCoalitionSample> rows;
  rows.push_back(
      WeightedCoalitionSample{Coalition::singleton(0), shap_kernel_weight(4, 1), 1.0, 1});
  rows.push_back(
      WeightedCoalitionSample{Coalition::singleton(1), shap_kernel_weight(4, 1), 2.0, 1});
  CHECK_THROWS_AS(solve_kernelshap(rows, 0.0, 1.0, 4), RankDeficiencyError);
}

TEST_CASE("solver rejects malformed rows") {
  std::vector<WeightedCoalitionSample> empty;
  CHECK_THROWS_AS(solve_kernelshap(empty, 0.0, 1.0, 3), Error);

  std::vector<WeightedCoalitionSample> bad;
  bad.push_back(WeightedCoalitionSample{Coalition::grand(3), 0.5, 1.0, 1});
  CHECK_THROWS_AS(solve_kernelshap(bad, 0.0, 1.0, 3), Error);
}
