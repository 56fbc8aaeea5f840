#include "savoir/sim_game.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace savoir {

namespace {

constexpr std::string_view kFuturePrefix = "(sim continuation";
constexpr int kFutureTurnsPerRollout = 4;

int count_future_turns(std::span<const Turn> history) {
  int count = 0;
  for (const Turn& t : history)
    if (t.text.starts_with(kFuturePrefix)) ++count;
  return count;
}

class SimPolicy final : public RolloutPolicy {
 public:
  SimPolicy(Speaker side, std::uint64_t seed) : side_(side), seed_(seed) {}

  std::optional<std::string> next_utterance(std::span<const Turn> history,
                                            const std::string& /*goal*/,
                                            std::uint64_t seed) override {
    const int step = count_future_turns(history);
    if (step >= kFutureTurnsPerRollout) return std::nullopt;
    // Token utterance; the trailing hash makes distinct rollouts visibly
    // distinct without ever colliding with an episode turn.
    return std::string(kFuturePrefix) + " " + to_string(side_) + " " +
           std::to_string(step) + " #" +
           std::to_string(stable_hash(seed_, seed) % 100000) + ")";
  }

  bool concurrent_safe() const override { return true; }

 private:
  Speaker side_;
  std::uint64_t seed_;
};

class SimScorer final : public TrajectoryScorer {
 public:
  SimScorer(SimGameSpec spec, UtilityWeights weights)
      : spec_(std::move(spec)), weights_(std::move(weights)) {
    spec_.validate();
    weights_.validate();
    if (spec_.dimension_split.weights.size() != weights_.weights.size())
      throw Error("sim dimension_split keys must match the utility weights");
    for (auto split_it = spec_.dimension_split.weights.begin();
         const auto& [key, w] : weights_.weights) {
      if (split_it->first != key)
        throw Error("sim dimension_split key \"" + split_it->first +
                    "\" does not match weight key \"" + key + "\"");
      if (w <= 0.0)
        throw Error("sim scorer requires strictly positive weights to split across "
                    "dimensions");
      ++split_it;
    }
  }

  DimensionScores score(const Episode& base, std::span<const Turn> trajectory,
                        std::uint64_t seed) override {
    const Coalition realized = realized_coalition(base, trajectory);
    double total = sim_expected_value(spec_, realized);
    if (spec_.noise_std > 0.0)
      total += spec_.noise_std *
               Rng(stable_hash(seed, std::string_view("sim-noise"))).gaussian();

    DimensionScores scores;
    auto split_it = spec_.dimension_split.weights.begin();
    for (const auto& [key, w] : weights_.weights) {
      scores.values[key] = total * split_it->second / w;
      ++split_it;
    }
    return scores;
  }

  bool concurrent_safe() const override { return true; }

 private:
  // Greedy subsequence alignment of the trajectory against the base episode:
  // a trajectory turn matches the first not-yet-consumed base turn with the
  // same speaker and text. H(S) is an ordered subsequence of the base turns,
  // so the matched agent turns are exactly the coalition; generated
  // continuation turns match nothing.
  Coalition realized_coalition(const Episode& base,
                               std::span<const Turn> trajectory) const {
    std::vector<int> player_of(base.turns.size(), -1);
    for (int i = 0; i < base.num_actions(); ++i)
      player_of[base.agent_action_indices[i]] = i;

    Coalition realized;
    std::size_t next = 0;
    for (const Turn& t : trajectory) {
      for (std::size_t q = next; q < base.turns.size(); ++q) {
        if (base.turns[q].speaker == t.speaker && base.turns[q].text == t.text) {
          if (player_of[q] >= 0) realized = realized.with(player_of[q]);
          next = q + 1;
          break;
        }
      }
    }
    return realized;
  }

  SimGameSpec spec_;
  UtilityWeights weights_;
};

}  // namespace

void SimGameSpec::validate() const {
  if (n < 1 || n > kMaxPlayers) throw Error("sim game size out of range");
  if (base_values.size() != n) throw Error("base_values must have n entries");
  if (synergy.rows() != n || synergy.cols() != n)
    throw Error("synergy must be n x n");
  for (int i = 0; i < n; ++i) {
    if (synergy(i, i) != 0.0) throw Error("synergy diagonal must be zero");
    for (int j = i + 1; j < n; ++j)
      if (synergy(i, j) != synergy(j, i)) throw Error("synergy must be symmetric");
  }
  if (!(noise_std >= 0.0)) throw Error("noise std must be nonnegative");
  double split_total = 0.0;
  for (const auto& [key, f] : dimension_split.weights) {
    if (!(f >= 0.0)) throw Error("dimension split fractions must be nonnegative");
    split_total += f;
  }
  if (std::abs(split_total - 1.0) > 1e-9)
    throw Error("dimension split fractions must sum to 1");
}

SimGameSpec SimGameSpec::seeded(int n, std::uint64_t seed, const SimGameParams& params) {
  PlayerSet players(n);
  Rng rng(seed);

  SimGameSpec spec;
  spec.n = n;
  spec.base_values.resize(n);
  if (params.spread_bases) {
    std::vector<double> grid(n);
    for (int i = 0; i < n; ++i)
      grid[i] = n == 1 ? 0.5 : 0.05 + 0.9 * static_cast<double>(i) / (n - 1);
    rng.shuffle(grid);
    for (int i = 0; i < n; ++i)
      spec.base_values[i] = grid[i] + rng.uniform(-params.base_jitter, params.base_jitter);
  } else {
    for (int i = 0; i < n; ++i) spec.base_values[i] = rng.uniform01();
  }

  spec.synergy = Eigen::MatrixXd::Zero(n, n);
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) {
      const double theta = rng.uniform(-params.synergy_scale, params.synergy_scale);
      spec.synergy(i, j) = theta;
      spec.synergy(j, i) = theta;
    }

  spec.partner_response_gain = params.gamma;
  spec.noise_std = params.sigma;
  spec.dimension_split =
      UtilityWeights{{{"goal", 0.6}, {"relationship", 0.25}, {"knowledge", 0.15}}};
  return spec;
}

double sim_expected_value(const SimGameSpec& spec, Coalition coalition) {
  if (!PlayerSet(spec.n).admits(coalition))
    throw Error("coalition outside the sim game's player set");
  double total = spec.partner_response_gain * coalition.size();
  for (int i = 0; i < spec.n; ++i) {
    if (!coalition.contains(i)) continue;
    total += spec.base_values[i];
    for (int j = i + 1; j < spec.n; ++j)
      if (coalition.contains(j)) total += spec.synergy(i, j);
  }
  return total;
}

std::shared_ptr<ValueOracle> analytic_sim_oracle(const SimGameSpec& spec) {
  SimGameSpec copy = spec;
  copy.validate();
  return std::make_shared<FunctionOracle>(
      copy.n, [copy](Coalition c) { return sim_expected_value(copy, c); });
}

Episode make_sim_episode(const SimGameSpec& spec, const std::string& episode_id) {
  Episode episode;
  episode.episode_id = episode_id;
  episode.scenario = "Simulated negotiation with " + std::to_string(spec.n) +
                     " agent moves (" + episode_id + ")";
  episode.agent_goal = "Maximize the simulated joint outcome";
  episode.partner_goal = "Respond to each proposal";

  int position = 0;
  episode.turns.push_back(Turn{Speaker::kPartner, "[p-open] opening remark", position++});
  for (int i = 0; i < spec.n; ++i) {
    episode.agent_action_indices.push_back(position);
    episode.turns.push_back(
        Turn{Speaker::kAgent, "[a" + std::to_string(i) + "] agent move " + std::to_string(i),
             position++});
    episode.turns.push_back(
        Turn{Speaker::kPartner, "[p" + std::to_string(i) + "] partner reply " + std::to_string(i),
             position++});
  }
  episode.validate();
  return episode;
}

SimRolloutBackend sim_rollout_backend(const SimGameSpec& spec,
                                      const UtilityWeights& weights,
                                      std::uint64_t seed) {
  SimRolloutBackend backend;
  backend.policies.agent_policy = std::make_shared<SimPolicy>(Speaker::kAgent, seed);
  backend.policies.partner_policy = std::make_shared<SimPolicy>(Speaker::kPartner, seed);
  backend.scorer = std::make_shared<SimScorer>(spec, weights);
  return backend;
}

SimGameSpec sim_spec_for_episode(const std::string& episode_id, std::uint64_t game_seed,
                                 int n, const SimGameParams& params) {
  return SimGameSpec::seeded(n, stable_hash(game_seed, episode_id), params);
}

Coalition sim_tagged_coalition(std::span<const std::string> texts, int n) {
  Coalition realized;
  for (const std::string& text : texts) {
    if (!text.starts_with("[a")) continue;
    const std::size_t close = text.find(']');
    if (close == std::string::npos || close <= 2) continue;
    int player = -1;
    try {
      player = std::stoi(text.substr(2, close - 2));
    } catch (const std::exception&) {
      continue;
    }
    if (player >= 0 && player < n) realized = realized.with(player);
  }
  return realized;
}

}  // namespace savoir
