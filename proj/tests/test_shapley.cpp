#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <set>

#include "savoir/shapley.hpp"
#include "support.hpp"

using namespace savoir;

namespace {

// Independent oracle: average marginal contributions over every one of the
// n! orderings, straight from the permutation definition. Kept free of the
// solver code it checks.
Eigen::VectorXd enumerate_all_permutations(int n,
                                           const std::function<double(Coalition)>& v) {
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(n);
  long count = 0;
  do {
    Coalition current;
    double previous = v(current);
    for (int player : order) {
      current = current.with(player);
      const double value = v(current);
      acc[player] += value - previous;
      previous = value;
    }
    ++count;
  } while (std::next_permutation(order.begin(), order.end()));
  return acc / static_cast<double>(count);
}

// Three-player worked example with pinned marginals for player 1 and free
// values f1 = v({0}), f3 = v({2}), f13 = v({0,2}).
std::function<double(Coalition)> worked_example_values(double f1 = 0.5, double f3 = 0.7,
                                                       double f13 = 1.4) {
  std::array<double, 8> v{};
  v[0b000] = 0.0;
  v[0b010] = 1.2;
  v[0b001] = f1;
  v[0b100] = f3;
  v[0b101] = f13;
  v[0b011] = f1 + 0.8;
  v[0b110] = f3 + 1.0;
  v[0b111] = f13 + 0.6;
  return [v](Coalition c) { return v[c.mask()]; };
}

std::function<double(Coalition)> random_values(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> table(std::size_t{1} << n);
  for (double& x : table) x = rng.uniform(-1.0, 1.0);
  return [table = std::move(table)](Coalition c) { return table[c.mask()]; };
}

}  // namespace

TEST_CASE("worked example: exact solver and permutation definition agree on 0.9") {
  auto values = worked_example_values();

  // marginal contributions of player 1 across all 6 orderings
  std::vector<double> marginals;
  std::vector<int> order{0, 1, 2};
  do {
    Coalition before;
    for (int player : order) {
      if (player == 1) {
        marginals.push_back(values(before.with(1)) - values(before));
        break;
      }
      before = before.with(player);
    }
  } while (std::next_permutation(order.begin(), order.end()));
  std::sort(marginals.begin(), marginals.end());
  const std::vector<double> expected{0.6, 0.6, 0.8, 1.0, 1.2, 1.2};
  REQUIRE(marginals.size() == expected.size());
  for (std::size_t i = 0; i < expected.size(); ++i)
    CHECK(marginals[i] == doctest::Approx(expected[i]).epsilon(1e-12));

  FunctionOracle oracle(3, values);
  const ShapleyVector phi = exact_shapley(oracle);
  CHECK(phi.values[1] == doctest::Approx(0.9).epsilon(1e-12));

  const Eigen::VectorXd by_enumeration = enumerate_all_permutations(3, values);
  CHECK((phi.values - by_enumeration).cwiseAbs().maxCoeff() <= 1e-12);
}

TEST_CASE("worked example: the free coalition values cannot move player 1") {
  Rng rng(7);
  for (int i = 0; i < 10; ++i) {
    FunctionOracle oracle(3, worked_example_values(rng.uniform(-2.0, 2.0),
                                                   rng.uniform(-2.0, 2.0),
                                                   rng.uniform(-2.0, 2.0)));
    CHECK(std::abs(exact_shapley(oracle).values[1] - 0.9) <= 1e-12);
  }
}

TEST_CASE("additive games attribute each player its own term") {
  FunctionOracle oracle(3, [](Coalition c) {
    double total = 0.0;
    const double terms[] = {1.0, 2.0, 3.0};
    for (int i = 0; i < 3; ++i)
      if (c.contains(i)) total += terms[i];
    return total;
  });
  const ShapleyVector phi = exact_shapley(oracle);
  CHECK(phi.values[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(phi.values[1] == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(phi.values[2] == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("exact solver matches full permutation enumeration on a random game") {
  auto values = random_values(6, 2026);
  FunctionOracle oracle(6, values);
  const ShapleyVector phi = exact_shapley(oracle);
  const Eigen::VectorXd by_enumeration = enumerate_all_permutations(6, values);
  CHECK((phi.values - by_enumeration).cwiseAbs().maxCoeff() <= 1e-12);
  CHECK(std::abs(phi.efficiency_gap()) <= 1e-12);
}

TEST_CASE("exact solver refuses enumeration past the budget") {
  FunctionOracle oracle(21, [](Coalition) { return 0.0; });
  CHECK_THROWS_AS(exact_shapley(oracle), BudgetError);
}

TEST_CASE("exact solver evaluates each coalition at most once") {
  test_support::CountingOracle oracle(7, [](Coalition c) {
    return static_cast<double>(c.size());
  });
  ValueCache cache;
  exact_shapley(oracle, cache);
  CHECK(oracle.calls() == 128);
  permutation_shapley(oracle, 50, 11, cache);  // shared cache, no new calls
  CHECK(oracle.calls() == 128);
}

TEST_CASE("single-player permutation estimate is the lone marginal") {
  FunctionOracle oracle(1, [](Coalition c) { return c.empty() ? 0.25 : 2.0; });
  const ShapleyVector phi = permutation_shapley(oracle, 17, 5);
  CHECK(phi.values[0] == doctest::Approx(1.75).epsilon(1e-12));
}

TEST_CASE("permutation estimate approaches the exact values") {
  FunctionOracle oracle(5, random_values(5, 909));
  const ShapleyVector exact = exact_shapley(oracle);
  const ShapleyVector estimate = permutation_shapley(oracle, 20000, 31);
  CHECK((estimate.values - exact.values).cwiseAbs().maxCoeff() <= 0.02);
  // telescoping makes the estimator exactly efficient too
  CHECK(std::abs(estimate.efficiency_gap()) <= 1e-9);
}

TEST_CASE("permutation estimate is reproducible for a fixed seed") {
  FunctionOracle oracle(6, random_values(6, 1234));
  const ShapleyVector a = permutation_shapley(oracle, 500, 77);
  const ShapleyVector b = permutation_shapley(oracle, 500, 77);
  CHECK(a.values == b.values);
  const ShapleyVector c = permutation_shapley(oracle, 500, 78);
  CHECK(a.values != c.values);
}
