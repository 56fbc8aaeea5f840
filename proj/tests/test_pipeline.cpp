#include <doctest.h>

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "savoir/validation.hpp"
#include "support.hpp"

using namespace savoir;

namespace {

AttributionConfig sim_config(SolverKind solver, std::uint64_t seed,
                             std::uint64_t game_seed = 0) {
  AttributionConfig config;
  config.solver = solver;
  config.backend = BackendKind::kSim;
  config.base_seed = seed;
  config.sim.game_seed = game_seed;
  return config;
}

std::string records_of(const Episode& episode, const AttributionResult& result) {
  std::ostringstream out;
  emit_records(episode, result, out);
  return out.str();
}

}  // namespace

TEST_CASE("reward normalization pins the documented fixtures") {
  Eigen::VectorXd raw(4);
  raw << 0.4, 0.8, 1.5, 0.3;
  const Eigen::VectorXd scaled = normalize_rewards(raw);
  CHECK(scaled[0] == doctest::Approx(0.83).epsilon(0.006));
  CHECK(scaled[1] == doctest::Approx(4.17).epsilon(0.006));
  CHECK(scaled[2] == 10.0);
  CHECK(scaled[3] == 0.0);

  Eigen::VectorXd flat(3);
  flat << 2.0, 2.0, 2.0;
  CHECK(normalize_rewards(flat) == Eigen::VectorXd::Constant(3, 5.0));
  CHECK(normalize_rewards(Eigen::VectorXd::Constant(1, 7.0)) ==
        Eigen::VectorXd::Constant(1, 5.0));

  Eigen::VectorXd pair(2);
  pair << -1.0, 1.0;
  const Eigen::VectorXd span = normalize_rewards(pair);
  CHECK(span[0] == 0.0);
  CHECK(span[1] == 10.0);

  Eigen::VectorXd bad(2);
  bad << 1.0, std::nan("");
  CHECK_THROWS_AS(normalize_rewards(bad), Error);
}

TEST_CASE("normalization is monotone and range-bounded") {
  Rng rng(606);
  for (int trial = 0; trial < 30; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    Eigen::VectorXd raw(n);
    for (int i = 0; i < n; ++i) raw[i] = rng.uniform(-50.0, 50.0);
    const Eigen::VectorXd scaled = normalize_rewards(raw);
    for (int i = 0; i < n; ++i) {
      CHECK(scaled[i] >= 0.0);
      CHECK(scaled[i] <= 10.0);
      for (int j = 0; j < n; ++j) {
        if (raw[i] < raw[j]) CHECK(scaled[i] < scaled[j]);
        if (raw[i] == raw[j]) CHECK(scaled[i] == scaled[j]);
      }
    }
    Eigen::Index raw_argmax, scaled_argmax;
    raw.maxCoeff(&raw_argmax);
    scaled.maxCoeff(&scaled_argmax);
    CHECK(raw_argmax == scaled_argmax);
  }
}

TEST_CASE("worked example embedded as an episode attributes 0.9 via rollouts") {
  // the three-player worked example is pairwise-representable, so the sim
  // backend can value it through full history reconstruction and rollouts
  SimGameSpec spec;
  spec.n = 3;
  spec.base_values = Eigen::Vector3d(0.5, 1.2, 0.7);
  spec.synergy = Eigen::Matrix3d::Zero();
  spec.synergy(0, 1) = spec.synergy(1, 0) = -0.4;
  spec.synergy(0, 2) = spec.synergy(2, 0) = 0.2;
  spec.synergy(1, 2) = spec.synergy(2, 1) = -0.2;
  spec.dimension_split =
      UtilityWeights{{{"goal", 0.6}, {"relationship", 0.25}, {"knowledge", 0.15}}};

  // the pairwise form reproduces the fixture's coalition table
  CHECK(sim_expected_value(spec, Coalition::from_mask(0b011)) ==
        doctest::Approx(1.3).epsilon(1e-12));
  CHECK(sim_expected_value(spec, Coalition::from_mask(0b111)) ==
        doctest::Approx(2.0).epsilon(1e-12));

  const Episode episode = make_sim_episode(spec, "worked-example");
  const UtilityWeights weights = UtilityWeights::sotopia_default();
  SimRolloutBackend backend = sim_rollout_backend(spec, weights);
  auto oracle = std::make_shared<RolloutValueOracle>(
      episode, backend.policies, backend.scorer, weights, 2, 11);
  const ShapleyVector phi = exact_shapley(*oracle);
  CHECK(phi.values[1] == doctest::Approx(0.9).epsilon(1e-9));
  CHECK(phi.values[0] == doctest::Approx(0.4).epsilon(1e-9));
  CHECK(phi.values[2] == doctest::Approx(0.7).epsilon(1e-9));
}

TEST_CASE("attribution is a pure function of episode and config") {
  const Episode episode = make_sim_episode(sim_spec_for_episode("pure", 3, 8, {}), "pure");
  const AttributionConfig config = sim_config(SolverKind::kKernelShap, 21, 3);

  const AttributionResult a = attribute_episode(episode, config);
  const AttributionResult b = attribute_episode(episode, config);
  CHECK(records_of(episode, a) == records_of(episode, b));
  CHECK(result_meta_json(a).dump() == result_meta_json(b).dump());
  CHECK(a.config_fingerprint == b.config_fingerprint);

  // jobs must not alter outputs
  AttributionConfig parallel = config;
  parallel.jobs = 4;
  const AttributionResult c = attribute_episode(episode, parallel);
  CHECK(records_of(episode, c) == records_of(episode, a));
  CHECK(c.config_fingerprint == a.config_fingerprint);
}

TEST_CASE("kernelshap and exact agree end to end in the exhaustive regime") {
  const Episode episode =
      make_sim_episode(sim_spec_for_episode("agree", 14, 6, {}), "agree");
  const AttributionResult exact =
      attribute_episode(episode, sim_config(SolverKind::kExact, 5, 14));
  const AttributionResult regressed =
      attribute_episode(episode, sim_config(SolverKind::kKernelShap, 5, 14));
  CHECK(regressed.plan.exhaustive);
  CHECK((exact.normalized_phi - regressed.normalized_phi).cwiseAbs().maxCoeff() <= 1e-4);
  CHECK(std::abs(exact.raw_phi.efficiency_gap()) <= 1e-9);
  CHECK(std::abs(regressed.raw_phi.efficiency_gap()) <= 1e-9);
}

TEST_CASE("permutation solver runs through the pipeline") {
  const Episode episode =
      make_sim_episode(sim_spec_for_episode("perm", 8, 5, {}), "perm");
  AttributionConfig config = sim_config(SolverKind::kPermutation, 2, 8);
  config.num_permutations = 4000;
  const AttributionResult estimate = attribute_episode(episode, config);
  const AttributionResult exact =
      attribute_episode(episode, sim_config(SolverKind::kExact, 2, 8));
  CHECK((estimate.raw_phi.values - exact.raw_phi.values).cwiseAbs().maxCoeff() <= 0.05);
}

TEST_CASE("single-action episodes are pinned by the constraints alone") {
  const Episode episode = make_sim_episode(sim_spec_for_episode("solo", 4, 1, {}), "solo");
  const AttributionResult result =
      attribute_episode(episode, sim_config(SolverKind::kKernelShap, 1, 4));
  CHECK(result.raw_phi.n() == 1);
  CHECK(result.raw_phi.values[0] ==
        doctest::Approx(result.raw_phi.v_full - result.raw_phi.v_empty).epsilon(1e-12));
  CHECK(result.normalized_phi[0] == 5.0);  // degenerate range maps to the midpoint
}

TEST_CASE("records carry strictly preceding context in action order") {
  const Episode episode =
      make_sim_episode(sim_spec_for_episode("ctx", 6, 4, {}), "ctx");
  const AttributionResult result =
      attribute_episode(episode, sim_config(SolverKind::kExact, 7, 6));

  std::istringstream lines(records_of(episode, result));
  std::string line;
  int index = 0;
  while (std::getline(lines, line)) {
    const auto record = nlohmann::json::parse(line);
    CHECK(record["episode_id"] == "ctx");
    CHECK(record["action_index"] == index);
    CHECK(record["score"].get<double>() ==
          doctest::Approx(result.normalized_phi[index]).epsilon(1e-12));

    const int action_position = episode.agent_action_indices[index];
    CHECK(record["action_text"] == episode.turns[action_position].text);
    const auto& history = record["context"]["history"];
    CHECK(static_cast<int>(history.size()) == action_position);
    for (const auto& turn : history)
      CHECK(turn["text"] != record["action_text"]);
    ++index;
  }
  CHECK(index == 4);

  // first action's context holds no agent utterances
  std::istringstream again(records_of(episode, result));
  std::getline(again, line);
  for (const auto& turn : nlohmann::json::parse(line)["context"]["history"])
    CHECK(turn["speaker"] == "partner");

  // re-emitting is byte-identical
  CHECK(records_of(episode, result) == records_of(episode, result));
}

TEST_CASE("episode json round-trips and rejects malformed input") {
  const Episode episode = make_sim_episode(sim_spec_for_episode("io", 2, 5, {}), "io");
  const auto dir = test_support::fresh_dir("episode-io");
  save_episode(episode, dir / "e.json");
  const Episode loaded = load_episode(dir / "e.json");
  CHECK(loaded.episode_id == episode.episode_id);
  CHECK(loaded.turns.size() == episode.turns.size());
  CHECK(loaded.agent_action_indices == episode.agent_action_indices);

  std::ofstream bad(dir / "bad.json");
  bad << "{\"episode_id\": \"x\", \"turns\": 42}";
  bad.close();
  CHECK_THROWS_AS(load_episode(dir / "bad.json"), ParseError);
  CHECK_THROWS_AS(load_episode(dir / "missing.json"), ParseError);

  // no agent turns -> no players
  std::ofstream empty(dir / "empty.json");
  empty << R"({"episode_id": "x", "turns": [{"speaker": "partner", "text": "hi"}]})";
  empty.close();
  CHECK_THROWS_AS(load_episode(dir / "empty.json"), Error);

  // the "agent" key names which speaker label is the target agent
  std::ofstream named(dir / "named.json");
  named << R"({"episode_id": "n", "scenario": "s", "agent_goal": "g",
               "partner_goal": "p", "agent": "mia",
               "turns": [{"speaker": "ben", "text": "hi"},
                         {"speaker": "mia", "text": "hello"},
                         {"speaker": "ben", "text": "bye"},
                         {"speaker": "mia", "text": "later"}]})";
  named.close();
  const Episode custom = load_episode(dir / "named.json");
  CHECK(custom.num_actions() == 2);
  CHECK(custom.agent_action_indices == std::vector<int>{1, 3});
  CHECK(custom.turns[0].speaker == Speaker::kPartner);
  CHECK(custom.turns[1].speaker == Speaker::kAgent);
}

TEST_CASE("backend failure reports the unevaluated coalition masks") {
  const Episode episode =
      make_sim_episode(sim_spec_for_episode("resume", 1, 4, {}), "resume");
  AttributionConfig config = sim_config(SolverKind::kKernelShap, 1, 1);
  config.backend = BackendKind::kExternal;
  config.external.transport = ExternalOracleConfig::Transport::kStdioSubprocess;
  // a peer that answers nothing, ever
  config.external.endpoint = "/bin/cat /dev/null";
  config.external.request_timeout = std::chrono::milliseconds(100);
  config.external.max_retries = 0;

  try {
    attribute_episode(episode, config);
    FAIL("expected AttributionError");
  } catch (const AttributionError& e) {
    CHECK(e.unevaluated_masks().size() == 16);  // nothing was evaluated
  }
}

TEST_CASE("dataset emission concatenates records and fingerprints") {
  const auto dir = test_support::fresh_dir("dataset");
  const auto results = dir / "results";
  std::filesystem::create_directories(results);

  int total_records = 0;
  for (int n : {4, 6}) {
    const std::string id = "ds-" + std::to_string(n);
    const Episode episode = make_sim_episode(sim_spec_for_episode(id, 2, n, {}), id);
    const AttributionResult result =
        attribute_episode(episode, sim_config(SolverKind::kExact, 3, 2));
    std::ofstream records(results / (id + ".jsonl"));
    total_records += emit_records(episode, result, records);
    std::ofstream meta(results / (id + ".meta.json"));
    meta << result_meta_json(result).dump(2) << '\n';
  }
  CHECK(total_records == 10);

  const DatasetManifest manifest = emit_dataset(results, dir / "dataset.jsonl");
  CHECK(manifest.episode_count == 2);
  CHECK(manifest.record_count == 10);
  CHECK(manifest.fingerprints.size() == 1);
  CHECK_FALSE(manifest.mixed_fingerprints);

  std::ifstream manifest_file(dir / "dataset.jsonl.manifest.json");
  const auto mj = nlohmann::json::parse(manifest_file);
  CHECK(mj["record_count"] == 10);

  CHECK_THROWS_AS(emit_dataset(dir / "nowhere", dir / "x.jsonl"), Error);
}
