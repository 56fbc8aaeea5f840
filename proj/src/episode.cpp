#include "savoir/episode.hpp"

#include <fstream>

#include <nlohmann/json.hpp>

namespace savoir {

std::string to_string(Speaker s) { return s == Speaker::kAgent ? "agent" : "partner"; }

void Episode::validate() const {
  if (episode_id.empty()) throw Error("episode_id must be non-empty");
  for (std::size_t i = 0; i < turns.size(); ++i)
    if (turns[i].position != static_cast<int>(i))
      throw Error("turn positions must be contiguous from 0 in episode " + episode_id);
  const int n = num_actions();
  if (n < 1)
    throw Error("episode " + episode_id + " has no agent actions");
  if (n > kMaxPlayers)
    throw Error("episode " + episode_id + " has " + std::to_string(n) +
                " agent actions; the attribution cap is " + std::to_string(kMaxPlayers));
  int previous = -1;
  for (int idx : agent_action_indices) {
    if (idx <= previous) throw Error("agent_action_indices must be strictly increasing");
    if (idx < 0 || idx >= static_cast<int>(turns.size()))
      throw Error("agent action index out of range: " + std::to_string(idx));
    if (turns[idx].speaker != Speaker::kAgent)
      throw Error("agent action index " + std::to_string(idx) +
                  " does not point at an agent turn");
    previous = idx;
  }
}

Episode episode_from_json(const nlohmann::json& j) {
  try {
    Episode episode;
    episode.episode_id = j.at("episode_id").get<std::string>();
    episode.scenario = j.value("scenario", std::string{});
    episode.agent_goal = j.value("agent_goal", std::string{});
    episode.partner_goal = j.value("partner_goal", std::string{});
    const std::string agent_label = j.value("agent", std::string{"agent"});

    const auto& turns = j.at("turns");
    if (!turns.is_array()) throw ParseError("\"turns\" must be an array");
    int position = 0;
    for (const auto& t : turns) {
      Turn turn;
      const std::string speaker = t.at("speaker").get<std::string>();
      turn.speaker = speaker == agent_label ? Speaker::kAgent : Speaker::kPartner;
      turn.text = t.at("text").get<std::string>();
      turn.position = position++;
      if (turn.speaker == Speaker::kAgent)
        episode.agent_action_indices.push_back(turn.position);
      episode.turns.push_back(std::move(turn));
    }
    episode.validate();
    return episode;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("invalid episode JSON: ") + e.what());
  } catch (const Error&) {
    throw;
  }
}

Episode load_episode(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open episode file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError("cannot parse " + path.string() + ": " + e.what());
  }
  return episode_from_json(j);
}

nlohmann::ordered_json episode_to_json(const Episode& episode) {
  nlohmann::ordered_json j;
  j["episode_id"] = episode.episode_id;
  j["scenario"] = episode.scenario;
  j["agent_goal"] = episode.agent_goal;
  j["partner_goal"] = episode.partner_goal;
  j["turns"] = nlohmann::ordered_json::array();
  for (const Turn& t : episode.turns)
    j["turns"].push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
  j["agent"] = "agent";
  return j;
}

void save_episode(const Episode& episode, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot open " + path.string() + " for writing");
  out << episode_to_json(episode).dump(2) << '\n';
}

}  // namespace savoir
