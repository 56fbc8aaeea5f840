#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "savoir/game.hpp"

namespace savoir {

enum class Speaker { kAgent, kPartner };

struct Turn {
  Speaker speaker = Speaker::kPartner;
  std::string text;
  int position = 0;
};

// A recorded multi-turn interaction. The target agent's turns are the game's
// players; agent_action_indices[i] is the turn position of action i.
struct Episode {
  std::string episode_id;
  std::string scenario;
  std::string agent_goal;
  std::string partner_goal;
  std::vector<Turn> turns;
  std::vector<int> agent_action_indices;

  int num_actions() const { return static_cast<int>(agent_action_indices.size()); }
  PlayerSet players() const { return PlayerSet(num_actions()); }

  // Checks the structural invariants: contiguous positions, strictly
  // increasing action indices pointing at agent turns, 1 <= n <= 63.
  void validate() const;
};

// Parses the episode input format. Agent actions are inferred from the turn
// speaker fields; the optional "agent" key names the speaker label that
// identifies the target agent (default "agent").
Episode episode_from_json(const nlohmann::json& j);
Episode load_episode(const std::filesystem::path& path);

nlohmann::ordered_json episode_to_json(const Episode& episode);
void save_episode(const Episode& episode, const std::filesystem::path& path);

std::string to_string(Speaker s);

}  // namespace savoir
