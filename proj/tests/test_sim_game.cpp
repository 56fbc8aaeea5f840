#include <doctest.h>

#include "savoir/shapley.hpp"
#include "savoir/sim_game.hpp"
#include "support.hpp"

using namespace savoir;

TEST_CASE("closed-form coalition value") {
  SimGameSpec spec;
  spec.n = 3;
  spec.base_values = Eigen::Vector3d(1.0, 2.0, 3.0);
  spec.synergy = Eigen::Matrix3d::Zero();
  spec.synergy(0, 1) = spec.synergy(1, 0) = 0.5;
  spec.dimension_split = UtilityWeights{{{"goal", 1.0}}};

  CHECK(sim_expected_value(spec, Coalition::empty_set()) == 0.0);
  CHECK(sim_expected_value(spec, Coalition::singleton(1)) == 2.0);
  CHECK(sim_expected_value(spec, Coalition::from_mask(0b011)) ==
        doctest::Approx(3.5).epsilon(1e-15));

  spec.partner_response_gain = 0.25;
  CHECK(sim_expected_value(spec, Coalition::from_mask(0b011)) ==
        doctest::Approx(4.0).epsilon(1e-15));
  CHECK(sim_expected_value(spec, Coalition::empty_set()) == 0.0);
}

TEST_CASE("seeded games are valid, reproducible, and unit-scale") {
  SimGameParams params;
  const SimGameSpec a = SimGameSpec::seeded(9, 123, params);
  const SimGameSpec b = SimGameSpec::seeded(9, 123, params);
  a.validate();
  CHECK(a.base_values == b.base_values);
  CHECK(a.synergy == b.synergy);
  for (int i = 0; i < 9; ++i) {
    CHECK(a.base_values[i] > 0.0);
    CHECK(a.base_values[i] < 1.0);
    CHECK(a.synergy(i, i) == 0.0);
    for (int j = 0; j < 9; ++j) CHECK(a.synergy(i, j) == a.synergy(j, i));
  }
  CHECK(SimGameSpec::seeded(9, 124, params).base_values != a.base_values);
}

TEST_CASE("pairwise games have a closed-form attribution") {
  // phi_i = b_i + gamma + half the synergy row: a theory check that anchors
  // the analytic oracle used by the statistical batteries
  SimGameParams params;
  params.synergy_scale = 0.3;
  const SimGameSpec spec = SimGameSpec::seeded(7, 2718, params);
  auto oracle = analytic_sim_oracle(spec);
  const Eigen::VectorXd phi = exact_shapley(*oracle).values;
  for (int i = 0; i < 7; ++i) {
    const double expected = spec.base_values[i] + spec.partner_response_gain +
                            0.5 * spec.synergy.row(i).sum();
    CHECK(phi[i] == doctest::Approx(expected).epsilon(1e-10));
  }
}

TEST_CASE("sim episodes embed one tagged turn per action") {
  const SimGameSpec spec = SimGameSpec::seeded(5, 9, {});
  const Episode episode = make_sim_episode(spec, "tagged");
  episode.validate();
  CHECK(episode.num_actions() == 5);
  CHECK(episode.turns.size() == 11);  // opening partner turn + n (agent, partner) pairs
  CHECK(episode.turns.front().speaker == Speaker::kPartner);

  std::vector<std::string> agent_texts;
  for (int idx : episode.agent_action_indices)
    agent_texts.push_back(episode.turns[idx].text);
  CHECK(sim_tagged_coalition(agent_texts, 5) == Coalition::grand(5));
  const std::vector<std::string> subset{agent_texts[1], agent_texts[3]};
  CHECK(sim_tagged_coalition(subset, 5).mask() == 0b01010);
}

TEST_CASE("noiseless rollouts equal the closed form exactly") {
  const SimGameSpec spec = SimGameSpec::seeded(6, 31, {});  // sigma = 0
  const Episode episode = make_sim_episode(spec, "noiseless");
  const UtilityWeights weights = UtilityWeights::sotopia_default();
  SimRolloutBackend backend = sim_rollout_backend(spec, weights);

  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Coalition c = Coalition::from_mask(rng.below(1u << 6));
    const ValueSample sample =
        rollout_value(episode, c, backend.policies, *backend.scorer, weights, 1, trial);
    CHECK(sample.value == doctest::Approx(sim_expected_value(spec, c)).epsilon(1e-12));
  }
}

TEST_CASE("noisy rollouts concentrate at the Monte-Carlo rate") {
  SimGameParams params;
  params.sigma = 1.0;
  const SimGameSpec spec = SimGameSpec::seeded(6, 77, params);
  const Episode episode = make_sim_episode(spec, "noisy");
  const UtilityWeights weights = UtilityWeights::sotopia_default();
  SimRolloutBackend backend = sim_rollout_backend(spec, weights);

  const Coalition c = Coalition::from_mask(0b101101);
  const int j_rollouts = 400;
  const ValueSample sample = rollout_value(episode, c, backend.policies,
                                           *backend.scorer, weights, j_rollouts, 2020);
  const double standard_error = params.sigma / std::sqrt(j_rollouts);
  CHECK(std::abs(sample.value - sim_expected_value(spec, c)) <= 3 * standard_error);
}

TEST_CASE("solvers through the rollout path match the analytic oracle") {
  const SimGameSpec spec = SimGameSpec::seeded(5, 205, {});
  const Episode episode = make_sim_episode(spec, "paths");
  const UtilityWeights weights = UtilityWeights::sotopia_default();
  SimRolloutBackend backend = sim_rollout_backend(spec, weights);

  auto rollout_oracle = std::make_shared<RolloutValueOracle>(
      episode, backend.policies, backend.scorer, weights, 2, 64);
  auto analytic = analytic_sim_oracle(spec);

  const Eigen::VectorXd via_rollouts = exact_shapley(*rollout_oracle).values;
  const Eigen::VectorXd via_closed_form = exact_shapley(*analytic).values;
  CHECK((via_rollouts - via_closed_form).cwiseAbs().maxCoeff() <= 1e-9);
}

TEST_CASE("dimension split recovers the total under the matching weights") {
  SimGameParams params;
  const SimGameSpec spec = SimGameSpec::seeded(4, 11, params);
  const UtilityWeights weights = UtilityWeights::sotopia_default();
  SimRolloutBackend backend = sim_rollout_backend(spec, weights);
  const Episode episode = make_sim_episode(spec, "split");

  const auto history = reconstruct_history(episode, Coalition::from_mask(0b0110));
  const DimensionScores scores = backend.scorer->score(episode, history, 5);
  CHECK(scores.values.size() == 3);
  CHECK(scores.values.at("goal") != scores.values.at("knowledge"));
  CHECK(aggregate_utility(scores, weights) ==
        doctest::Approx(sim_expected_value(spec, Coalition::from_mask(0b0110)))
            .epsilon(1e-12));
}
