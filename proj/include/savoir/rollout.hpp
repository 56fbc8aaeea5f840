#pragma once

#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "savoir/episode.hpp"

namespace savoir {

// Per-dimension trajectory scores, keyed by dimension name.
struct DimensionScores {
  std::map<std::string, double> values;
};

// Nonnegative aggregation weights over the same dimension keys.
struct UtilityWeights {
  std::map<std::string, double> weights;

  // goal 0.5, relationship 0.3, knowledge 0.2
  static UtilityWeights sotopia_default();

  void validate() const;
};

// U = sum_d w_d * G_d. The weighted scores are summed directly; the weights
// already encode scale. Key sets must match exactly.
double aggregate_utility(const DimensionScores& scores, const UtilityWeights& weights);

// Produces the next utterance of one side of the dialogue, or nullopt to
// terminate. `seed` is derived per call by the driver, so a policy never
// needs internal random state.
class RolloutPolicy {
 public:
  virtual ~RolloutPolicy() = default;

  virtual std::optional<std::string> next_utterance(std::span<const Turn> history,
                                                    const std::string& goal,
                                                    std::uint64_t seed) = 0;

  virtual bool concurrent_safe() const { return false; }
};

struct RolloutPolicyPair {
  std::shared_ptr<RolloutPolicy> agent_policy;
  std::shared_ptr<RolloutPolicy> partner_policy;
  int max_future_turns = 20;

  bool concurrent_safe() const {
    return agent_policy && partner_policy && agent_policy->concurrent_safe() &&
           partner_policy->concurrent_safe();
  }
};

// Scores one completed trajectory into per-dimension scores. `base` is the
// episode the trajectory continues from.
class TrajectoryScorer {
 public:
  virtual ~TrajectoryScorer() = default;

  virtual DimensionScores score(const Episode& base, std::span<const Turn> trajectory,
                                std::uint64_t seed) = 0;

  virtual bool concurrent_safe() const { return false; }
};

// Counterfactual history H(S): keeps, in original order, every agent turn
// whose action is in the coalition and every partner turn whose nearest
// preceding agent turn was kept. Partner turns before the first agent turn
// are always kept. Positions are re-indexed contiguously.
std::vector<Turn> reconstruct_history(const Episode& episode, Coalition coalition);

// Monte-Carlo coalition value: reconstructs H(S), runs J continuations
// alternating the two policies until one terminates or max_future_turns is
// reached, scores each completed trajectory, and returns the mean aggregate
// utility. Rollout j draws every decision from seed
// stable_hash(base_seed, episode_id, mask, j), so a coalition's value does
// not depend on what else is being evaluated.
ValueSample rollout_value(const Episode& episode, Coalition coalition,
                          const RolloutPolicyPair& policies, TrajectoryScorer& scorer,
                          const UtilityWeights& weights, int j_rollouts,
                          std::uint64_t base_seed);

// Value-oracle adapter over rollout_value for one episode.
class RolloutValueOracle final : public ValueOracle {
 public:
  RolloutValueOracle(Episode episode, RolloutPolicyPair policies,
                     std::shared_ptr<TrajectoryScorer> scorer, UtilityWeights weights,
                     int j_rollouts, std::uint64_t base_seed);

  int num_players() const override { return episode_.num_actions(); }
  ValueSample evaluate(Coalition coalition) override;
  bool concurrent_safe() const override;

 private:
  Episode episode_;
  RolloutPolicyPair policies_;
  std::shared_ptr<TrajectoryScorer> scorer_;
  UtilityWeights weights_;
  int j_rollouts_;
  std::uint64_t base_seed_;
};

}  // namespace savoir
