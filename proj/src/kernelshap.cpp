#include "savoir/kernelshap.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <unordered_map>

namespace savoir {

namespace {

constexpr int kTableSize = kMaxPlayers + 1;

using BinomialTable = std::array<std::array<std::uint64_t, kTableSize>, kTableSize>;

const BinomialTable& binomial_table() {
  static const BinomialTable table = [] {
    BinomialTable t{};
    for (int n = 0; n < kTableSize; ++n) {
      t[n][0] = 1;
      for (int k = 1; k <= n; ++k)
        t[n][k] = t[n - 1][k - 1] + (k <= n - 1 ? t[n - 1][k] : 0);
    }
    return t;
  }();
  return table;
}

}  // namespace

double shap_kernel_weight(int n, int s) {
  if (n < 2 || n > kMaxPlayers)
    throw std::domain_error("shap_kernel_weight requires 2 <= n <= 63");
  if (s <= 0 || s >= n)
    throw std::domain_error(
        "kernel weight is infinite at sizes 0 and n; those coalitions enter "
        "the solve as constraints, not rows");
  // s*(n-s) stays integral so the s <-> n-s symmetry is bit-exact even where
  // the binomial no longer fits a double mantissa.
  const double binom = static_cast<double>(binomial_table()[n][s]);
  return static_cast<double>(n - 1) / (binom * static_cast<double>(s * (n - s)));
}

SamplingPlan build_sampling_plan(int n, std::uint64_t seed) {
  PlayerSet players(n);
  SamplingPlan plan;
  plan.n = n;
  plan.budget_k = std::min(12 * n + 2, 200);
  plan.seed = seed;

  std::unordered_map<std::uint64_t, std::size_t> interior_index;
  auto add_mandatory = [&](Coalition c) {
    for (const Coalition& existing : plan.mandatory)
      if (existing == c) return;
    plan.mandatory.push_back(c);
    if (0 < c.size() && c.size() < n) {
      interior_index.emplace(c.mask(), plan.interior.size());
      plan.interior.push_back(PlanEntry{c, 1});
    }
  };

  const Coalition grand = players.grand();
  add_mandatory(Coalition::empty_set());
  add_mandatory(grand);
  for (int i = 0; i < n; ++i) add_mandatory(Coalition::singleton(i));
  for (int i = 0; i < n; ++i) add_mandatory(grand.without(i));

  plan.exhaustive = n <= kMaxEnumerationPlayers &&
                    (std::uint64_t{1} << n) <= static_cast<std::uint64_t>(plan.budget_k);

  if (plan.exhaustive) {
    for (std::uint64_t mask = 1; mask < grand.mask(); ++mask) {
      if (interior_index.contains(mask)) continue;
      Coalition c = Coalition::from_mask(mask);
      plan.sampled.push_back(c);
      interior_index.emplace(mask, plan.interior.size());
      plan.interior.push_back(PlanEntry{c, 1});
    }
    return plan;
  }

  // Size classes s = 1..n-1 drawn with probability proportional to the total
  // kernel mass of the class, C(n,s) * w(n,s) = (n-1)/(s(n-s)).
  std::vector<double> cumulative(n - 1);
  double total = 0.0;
  for (int s = 1; s < n; ++s) {
    total += static_cast<double>(n - 1) / (static_cast<double>(s) * (n - s));
    cumulative[s - 1] = total;
  }

  Rng rng(seed);
  std::vector<int> indices(n);
  const int extra_draws = 10 * n;
  for (int draw = 0; draw < extra_draws; ++draw) {
    const double u = rng.uniform01() * total;
    const int s = 1 + static_cast<int>(std::lower_bound(cumulative.begin(),
                                                        cumulative.end(), u) -
                                       cumulative.begin());

    // Uniform coalition of size s: partial Fisher-Yates over player indices.
    std::iota(indices.begin(), indices.end(), 0);
    std::uint64_t mask = 0;
    for (int k = 0; k < s; ++k) {
      const std::uint64_t j = static_cast<std::uint64_t>(k) + rng.below(n - k);
      std::swap(indices[k], indices[j]);
      mask |= 1ull << indices[k];
    }

    if (auto it = interior_index.find(mask); it != interior_index.end()) {
      ++plan.interior[it->second].multiplicity;
    } else if (plan.num_distinct() < plan.budget_k) {
      Coalition c = Coalition::from_mask(mask);
      plan.sampled.push_back(c);
      interior_index.emplace(mask, plan.interior.size());
      plan.interior.push_back(PlanEntry{c, 1});
    }
    // A new mask with the distinct budget already spent is dropped.
  }
  return plan;
}

KernelShapSolution solve_kernelshap(std::span<const WeightedCoalitionSample> rows,
                                    double v_empty, double v_full, int n) {
  if (n < 2) throw Error("solve_kernelshap requires n >= 2");
  if (rows.empty()) throw Error("solve_kernelshap requires at least one row");
  const PlayerSet players(n);
  for (const auto& row : rows) {
    if (!players.admits(row.coalition))
      throw Error("regression row coalition lies outside the player set");
    if (row.coalition.size() <= 0 || row.coalition.size() >= n)
      throw Error("regression rows must satisfy 0 < |S| < n");
    if (row.multiplicity < 1) throw Error("row multiplicity must be >= 1");
    if (!(row.kernel_weight > 0.0) || !std::isfinite(row.kernel_weight))
      throw Error("row kernel weight must be positive and finite");
  }

  const int m = n - 1;  // unknowns after eliminating phi_{n-1}
  const double delta = v_full - v_empty;

  // Reduced design: b_k = v(S_k) - v_empty - z_{k,n-1} * delta,
  // a_ki = z_ki - z_{k,n-1} for i < n-1.
  Eigen::MatrixXd normal = Eigen::MatrixXd::Zero(m, m);
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m);
  Eigen::VectorXd a(m);
  for (const auto& row : rows) {
    const double w = row.kernel_weight * row.multiplicity;
    const double z_last = row.coalition.contains(n - 1) ? 1.0 : 0.0;
    for (int i = 0; i < m; ++i)
      a[i] = (row.coalition.contains(i) ? 1.0 : 0.0) - z_last;
    const double b = row.value - v_empty - z_last * delta;
    normal.selfadjointView<Eigen::Lower>().rankUpdate(a, w);
    rhs.noalias() += (w * b) * a;
  }
  normal.triangularView<Eigen::StrictlyUpper>() =
      normal.transpose().triangularView<Eigen::StrictlyUpper>();

  RegressionDiagnostics diagnostics;
  diagnostics.num_rows = static_cast<int>(rows.size());

  const double rhs_scale = std::max(1.0, rhs.norm());
  // A near-zero LDLT pivot flags an unidentified direction even when the
  // right-hand side happens to be consistent with it.
  auto solve_checked = [&](const Eigen::MatrixXd& matrix) -> std::optional<Eigen::VectorXd> {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(matrix);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    const Eigen::VectorXd pivots = ldlt.vectorD();
    const double largest = pivots.maxCoeff();
    if (!(largest > 0.0) || pivots.minCoeff() <= 1e-12 * largest) return std::nullopt;
    Eigen::VectorXd x = ldlt.solve(rhs);
    if (!x.allFinite() || (matrix * x - rhs).norm() > 1e-8 * rhs_scale)
      return std::nullopt;
    return x;
  };

  Eigen::VectorXd x;
  if (auto direct = solve_checked(normal)) {
    x = std::move(*direct);
  } else {
    // Singular normal equations: fewer than m independent rows is a caller
    // error; anything else is conditioning, which the ridge absorbs.
    Eigen::MatrixXd design(rows.size(), m);
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto& row = rows[k];
      const double sw = std::sqrt(row.kernel_weight * row.multiplicity);
      const double z_last = row.coalition.contains(n - 1) ? 1.0 : 0.0;
      for (int i = 0; i < m; ++i)
        design(static_cast<Eigen::Index>(k), i) =
            sw * ((row.coalition.contains(i) ? 1.0 : 0.0) - z_last);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < m)
      throw RankDeficiencyError(
          "regression system is rank deficient (" + std::to_string(qr.rank()) +
          " independent rows for " + std::to_string(m) +
          " unknowns), which no ridge can repair; enlarge the sampling plan");

    normal.diagonal().array() += 1e-10;
    diagnostics.ridge_applied = true;
    if (auto ridged = solve_checked(normal)) {
      x = std::move(*ridged);
    } else {
      diagnostics.condition_warning = true;
      x = Eigen::LDLT<Eigen::MatrixXd>(normal).solve(rhs);
      if (!x.allFinite())
        throw RankDeficiencyError("regression system could not be solved");
    }
  }

  KernelShapSolution solution;
  solution.phi.values.resize(n);
  solution.phi.values.head(m) = x;
  solution.phi.values[n - 1] = delta - x.sum();
  solution.phi.v_empty = v_empty;
  solution.phi.v_full = v_full;

  double wrss = 0.0;
  for (const auto& row : rows) {
    double fitted = v_empty;
    for (int i = 0; i < n; ++i)
      if (row.coalition.contains(i)) fitted += solution.phi.values[i];
    const double r = row.value - fitted;
    wrss += row.kernel_weight * row.multiplicity * r * r;
  }
  diagnostics.weighted_residual_sum_of_squares = wrss;
  solution.diagnostics = diagnostics;
  return solution;
}

std::vector<WeightedCoalitionSample> plan_rows(const SamplingPlan& plan,
                                               ValueOracle& oracle,
                                               ValueCache& cache) {
  std::vector<WeightedCoalitionSample> rows;
  rows.reserve(plan.interior.size());
  for (const PlanEntry& entry : plan.interior) {
    WeightedCoalitionSample row;
    row.coalition = entry.coalition;
    row.multiplicity = entry.multiplicity;
    row.kernel_weight = shap_kernel_weight(plan.n, entry.coalition.size());
    row.value = evaluate_cached(oracle, entry.coalition, cache);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace savoir
