#pragma once

#include <Eigen/Dense>
#include <memory>

#include "savoir/rollout.hpp"

namespace savoir {

// Distribution knobs for seeded game generation. With spread_bases the base
// values are a shuffled even grid over [0.05, 0.95] plus jitter, so actions
// have distinguishable quality; otherwise they are iid uniform on [0, 1).
struct SimGameParams {
  bool spread_bases = true;
  double base_jitter = 0.01;
  double synergy_scale = 0.05;
  double gamma = 0.05;   // partner response gain per retained action
  double sigma = 0.0;    // rollout noise std
};

// Closed-form dialogue game: a coalition is worth the sum of its members'
// base values, plus pairwise synergies, plus gamma per member. Positive and
// negative synergy entries exercise both the redundancy and the
// complementarity regimes of the attribution axioms.
struct SimGameSpec {
  int n = 0;
  Eigen::VectorXd base_values;
  Eigen::MatrixXd synergy;  // symmetric, zero diagonal
  double partner_response_gain = 0.0;
  double noise_std = 0.0;
  // Fractions (summing to 1) of the total utility carried by each dimension.
  UtilityWeights dimension_split;

  void validate() const;

  // Deterministic generation from a seed: bases first (grid shuffle +
  // jitter, or iid uniforms), then the synergy upper triangle row by row.
  static SimGameSpec seeded(int n, std::uint64_t seed, const SimGameParams& params = {});
};

// E[v(S)] = sum_{i in S} b_i + sum_{i<j in S} synergy_ij + gamma * |S|.
// The exact expectation of the simulated rollout path with noise integrated
// out; the ground truth for every statistical acceptance check.
double sim_expected_value(const SimGameSpec& spec, Coalition coalition);

// Closed-form oracle over sim_expected_value (no rollouts, no noise).
std::shared_ptr<ValueOracle> analytic_sim_oracle(const SimGameSpec& spec);

// Fixture episode for the game: an opening partner turn, then each action i
// as an agent turn tagged "[a<i>]" followed by a partner reply.
Episode make_sim_episode(const SimGameSpec& spec, const std::string& episode_id);

struct SimRolloutBackend {
  RolloutPolicyPair policies;
  std::shared_ptr<TrajectoryScorer> scorer;
};

// Seeded policies emitting token continuation turns, and a scorer whose
// trajectory utility is sim_expected_value of the realized coalition plus
// Gaussian(0, sigma^2) noise drawn from the scoring seed. The scorer splits
// the total across dimensions as G_d = total * split_d / w_d, so
// aggregate_utility with the given weights recovers the total exactly.
SimRolloutBackend sim_rollout_backend(const SimGameSpec& spec,
                                      const UtilityWeights& weights,
                                      std::uint64_t seed = 0);

// Players whose "[a<i>]" tag appears in the given turn texts. Used by
// protocol peers that score a history without access to the base episode.
Coalition sim_tagged_coalition(std::span<const std::string> texts, int n);

// The game spec backing a given episode id: seeded from
// stable_hash(game_seed, episode_id). Both the in-process sim backend and
// any replaying oracle peer must derive specs this way so their values agree.
SimGameSpec sim_spec_for_episode(const std::string& episode_id, std::uint64_t game_seed,
                                 int n, const SimGameParams& params = {});

}  // namespace savoir
