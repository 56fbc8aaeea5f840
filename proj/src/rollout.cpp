#include "savoir/rollout.hpp"

#include <cmath>

namespace savoir {

UtilityWeights UtilityWeights::sotopia_default() {
  return UtilityWeights{{{"goal", 0.5}, {"relationship", 0.3}, {"knowledge", 0.2}}};
}

void UtilityWeights::validate() const {
  double total = 0.0;
  for (const auto& [key, w] : weights) {
    if (!(w >= 0.0) || !std::isfinite(w))
      throw Error("utility weight for \"" + key + "\" must be nonnegative and finite");
    total += w;
  }
  if (!(total > 0.0)) throw Error("utility weights must not all be zero");
}

double aggregate_utility(const DimensionScores& scores, const UtilityWeights& weights) {
  if (scores.values.size() != weights.weights.size())
    throw Error("dimension score/weight key sets differ in size");
  double total = 0.0;
  auto ws = weights.weights.begin();
  for (const auto& [key, g] : scores.values) {
    if (ws->first != key)
      throw Error("dimension key mismatch: scores have \"" + key +
                  "\", weights have \"" + ws->first + "\"");
    if (!std::isfinite(g)) throw Error("dimension score for \"" + key + "\" is not finite");
    total += ws->second * g;
    ++ws;
  }
  return total;
}

std::vector<Turn> reconstruct_history(const Episode& episode, Coalition coalition) {
  if (!episode.players().admits(coalition))
    throw Error("coalition outside the episode's player set");

  // player index by turn position, -1 for partner turns
  std::vector<int> player_of(episode.turns.size(), -1);
  for (int i = 0; i < episode.num_actions(); ++i)
    player_of[episode.agent_action_indices[i]] = i;

  std::vector<Turn> history;
  bool seen_agent_turn = false;
  bool last_agent_kept = false;
  for (const Turn& turn : episode.turns) {
    bool keep = false;
    if (turn.speaker == Speaker::kAgent) {
      const int player = player_of[turn.position];
      keep = player >= 0 && coalition.contains(player);
      seen_agent_turn = true;
      last_agent_kept = keep;
    } else {
      keep = !seen_agent_turn || last_agent_kept;
    }
    if (keep) {
      Turn kept = turn;
      kept.position = static_cast<int>(history.size());
      history.push_back(std::move(kept));
    }
  }
  return history;
}

ValueSample rollout_value(const Episode& episode, Coalition coalition,
                          const RolloutPolicyPair& policies, TrajectoryScorer& scorer,
                          const UtilityWeights& weights, int j_rollouts,
                          std::uint64_t base_seed) {
  if (j_rollouts < 1) throw Error("rollout count J must be >= 1");
  if (!policies.agent_policy || !policies.partner_policy)
    throw Error("rollout requires both an agent and a partner policy");
  if (policies.max_future_turns < 0) throw Error("max_future_turns must be >= 0");
  weights.validate();

  const std::vector<Turn> base_history = reconstruct_history(episode, coalition);
  const Speaker first_speaker =
      base_history.empty()
          ? episode.turns.front().speaker
          : (base_history.back().speaker == Speaker::kAgent ? Speaker::kPartner
                                                            : Speaker::kAgent);

  double total_utility = 0.0;
  for (int j = 0; j < j_rollouts; ++j) {
    const std::uint64_t rollout_seed =
        stable_hash(base_seed, episode.episode_id, coalition.mask(),
                    static_cast<std::uint64_t>(j));

    std::vector<Turn> trajectory = base_history;
    Speaker speaker = first_speaker;
    for (int step = 0; step < policies.max_future_turns; ++step) {
      RolloutPolicy& policy = speaker == Speaker::kAgent ? *policies.agent_policy
                                                         : *policies.partner_policy;
      const std::string& goal =
          speaker == Speaker::kAgent ? episode.agent_goal : episode.partner_goal;
      const std::uint64_t call_seed =
          stable_hash(rollout_seed, std::string_view("policy-step"),
                      static_cast<std::uint64_t>(step));
      std::optional<std::string> utterance =
          policy.next_utterance(trajectory, goal, call_seed);
      if (!utterance) break;
      trajectory.push_back(
          Turn{speaker, std::move(*utterance), static_cast<int>(trajectory.size())});
      speaker = speaker == Speaker::kAgent ? Speaker::kPartner : Speaker::kAgent;
    }

    const DimensionScores scores = scorer.score(episode, trajectory, rollout_seed);
    total_utility += aggregate_utility(scores, weights);
  }

  return ValueSample{coalition, total_utility / j_rollouts, j_rollouts};
}

RolloutValueOracle::RolloutValueOracle(Episode episode, RolloutPolicyPair policies,
                                       std::shared_ptr<TrajectoryScorer> scorer,
                                       UtilityWeights weights, int j_rollouts,
                                       std::uint64_t base_seed)
    : episode_(std::move(episode)),
      policies_(std::move(policies)),
      scorer_(std::move(scorer)),
      weights_(std::move(weights)),
      j_rollouts_(j_rollouts),
      base_seed_(base_seed) {
  episode_.validate();
  if (!scorer_) throw Error("rollout oracle requires a trajectory scorer");
}

ValueSample RolloutValueOracle::evaluate(Coalition coalition) {
  return rollout_value(episode_, coalition, policies_, *scorer_, weights_, j_rollouts_,
                       base_seed_);
}

bool RolloutValueOracle::concurrent_safe() const {
  return policies_.concurrent_safe() && scorer_->concurrent_safe();
}

}  // namespace savoir
