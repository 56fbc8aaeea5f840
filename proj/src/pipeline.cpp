#include "savoir/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cstdio>
#include <fstream>
#include <set>
#include <thread>

#include <nlohmann/json.hpp>

namespace savoir {

namespace {

std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

void append_weights(std::string& canon, const char* tag, const UtilityWeights& w) {
  canon += tag;
  canon += '=';
  for (const auto& [key, value] : w.weights) {
    canon += key;
    canon += ':';
    canon += format_double(value);
    canon += ',';
  }
  canon += ';';
}

// Evaluates the given coalitions into the cache, in parallel when the oracle
// allows it. Results do not depend on `jobs`: values are seeded per
// coalition and the cache is single-flight.
void prepopulate_cache(ValueOracle& oracle, ValueCache& cache,
                       const std::vector<Coalition>& coalitions, int jobs) {
  const int width = std::min<int>(jobs, static_cast<int>(coalitions.size()));
  if (width <= 1 || !oracle.concurrent_safe()) {
    for (Coalition c : coalitions) evaluate_cached(oracle, c, cache);
    return;
  }

  std::atomic<std::size_t> next{0};
  std::atomic<bool> failed{false};
  std::mutex error_mu;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= coalitions.size() || failed.load()) return;
      try {
        evaluate_cached(oracle, coalitions[i], cache);
      } catch (...) {
        std::lock_guard lock(error_mu);
        if (!first_error) first_error = std::current_exception();
        failed.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(width);
  for (int t = 0; t < width; ++t) threads.emplace_back(worker);
  for (auto& t : threads) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::vector<std::uint64_t> unevaluated_masks(const std::vector<Coalition>& planned,
                                             const ValueCache& cache) {
  std::vector<std::uint64_t> missing;
  for (Coalition c : planned)
    if (!cache.lookup(c.mask())) missing.push_back(c.mask());
  std::sort(missing.begin(), missing.end());
  return missing;
}

}  // namespace

std::string to_string(SolverKind solver) {
  switch (solver) {
    case SolverKind::kExact: return "exact";
    case SolverKind::kPermutation: return "permutation";
    case SolverKind::kKernelShap: return "kernelshap";
  }
  throw Error("unknown solver kind");
}

std::string to_string(BackendKind backend) {
  return backend == BackendKind::kSim ? "sim" : "external";
}

SolverKind parse_solver(const std::string& name) {
  if (name == "exact") return SolverKind::kExact;
  if (name == "permutation") return SolverKind::kPermutation;
  if (name == "kernelshap") return SolverKind::kKernelShap;
  throw Error("unknown solver \"" + name + "\" (expected exact|permutation|kernelshap)");
}

BackendKind parse_backend(const std::string& name) {
  if (name == "sim") return BackendKind::kSim;
  if (name == "external") return BackendKind::kExternal;
  throw Error("unknown backend \"" + name + "\" (expected sim|external)");
}

void AttributionConfig::validate() const {
  if (j_rollouts < 1) throw Error("J (rollouts per coalition) must be >= 1");
  if (num_permutations < 1) throw Error("num_permutations must be >= 1");
  if (max_future_turns < 0) throw Error("max_future_turns must be >= 0");
  if (jobs < 1) throw Error("jobs must be >= 1");
  utility_weights.validate();
  if (backend == BackendKind::kExternal) external.validate();
}

std::string AttributionConfig::fingerprint() const {
  std::string canon;
  canon += "solver=" + to_string(solver) + ";";
  canon += "j=" + std::to_string(j_rollouts) + ";";
  canon += "perms=" + std::to_string(num_permutations) + ";";
  canon += "seed=" + std::to_string(base_seed) + ";";
  canon += "max_future_turns=" + std::to_string(max_future_turns) + ";";
  append_weights(canon, "weights", utility_weights);
  canon += "backend=" + to_string(backend) + ";";
  if (backend == BackendKind::kSim) {
    canon += "sim.game_seed=" + std::to_string(sim.game_seed) + ";";
    canon += "sim.spread=" + std::to_string(sim.game.spread_bases ? 1 : 0) + ";";
    canon += "sim.jitter=" + format_double(sim.game.base_jitter) + ";";
    canon += "sim.synergy=" + format_double(sim.game.synergy_scale) + ";";
    canon += "sim.gamma=" + format_double(sim.game.gamma) + ";";
    canon += "sim.sigma=" + format_double(sim.game.sigma) + ";";
  } else {
    canon += "ext.transport=" +
             std::string(external.transport == ExternalOracleConfig::Transport::kTcp
                             ? "tcp"
                             : "stdio-subprocess") +
             ";";
    canon += "ext.endpoint=" + external.endpoint + ";";
    canon += "ext.timeout_ms=" + std::to_string(external.request_timeout.count()) + ";";
    canon += "ext.max_retries=" + std::to_string(external.max_retries) + ";";
    canon += "ext.score=" + format_double(external.score_min) + "," +
             format_double(external.score_max) + ";";
  }

  char hex[17];
  std::snprintf(hex, sizeof hex, "%016" PRIx64, stable_hash(canon));
  return hex;
}

Eigen::VectorXd normalize_rewards(const Eigen::VectorXd& raw) {
  if (raw.size() < 1) throw Error("normalize_rewards requires at least one value");
  if (!raw.allFinite()) throw Error("normalize_rewards rejects non-finite input");
  const double lo = raw.minCoeff();
  const double hi = raw.maxCoeff();
  if (lo == hi) return Eigen::VectorXd::Constant(raw.size(), 5.0);
  return 10.0 * (raw.array() - lo) / (hi - lo);
}

std::shared_ptr<ValueOracle> make_backend_oracle(const Episode& episode,
                                                 const AttributionConfig& config) {
  if (config.backend == BackendKind::kExternal)
    return external_value_oracle(config.external, episode, config.utility_weights,
                                 config.j_rollouts, config.base_seed);

  const SimGameSpec spec = sim_spec_for_episode(
      episode.episode_id, config.sim.game_seed, episode.num_actions(), config.sim.game);
  SimRolloutBackend backend =
      sim_rollout_backend(spec, config.utility_weights, config.sim.game_seed);
  backend.policies.max_future_turns = config.max_future_turns;
  return std::make_shared<RolloutValueOracle>(episode, std::move(backend.policies),
                                              backend.scorer, config.utility_weights,
                                              config.j_rollouts, config.base_seed);
}

AttributionResult attribute_episode(const Episode& episode,
                                    const AttributionConfig& config) {
  episode.validate();
  config.validate();
  const int n = episode.num_actions();

  std::shared_ptr<ValueOracle> oracle = make_backend_oracle(episode, config);
  ValueCache cache;

  AttributionResult result;
  result.episode_id = episode.episode_id;
  result.config_fingerprint = config.fingerprint();
  result.plan.n = n;

  try {
    switch (config.solver) {
      case SolverKind::kExact: {
        prepopulate_cache(*oracle, cache, all_coalitions(n), config.jobs);
        result.raw_phi = exact_shapley(*oracle, cache);
        result.plan.exhaustive = true;
        result.plan.budget_k = 1 << n;
        break;
      }
      case SolverKind::kPermutation: {
        const std::uint64_t stream_seed = stable_hash(
            config.base_seed, episode.episode_id, std::string_view("permutation-stream"));
        result.raw_phi =
            permutation_shapley(*oracle, config.num_permutations, stream_seed, cache);
        break;
      }
      case SolverKind::kKernelShap: {
        const Coalition empty = Coalition::empty_set();
        const Coalition grand = Coalition::grand(n);
        if (n == 1) {
          // No interior coalitions exist; the two constraints pin the value.
          const double v_empty = evaluate_cached(*oracle, empty, cache);
          const double v_full = evaluate_cached(*oracle, grand, cache);
          result.raw_phi.values = Eigen::VectorXd::Constant(1, v_full - v_empty);
          result.raw_phi.v_empty = v_empty;
          result.raw_phi.v_full = v_full;
          result.plan.exhaustive = true;
          result.plan.budget_k = std::min(12 * n + 2, 200);
          result.plan.num_mandatory = 2;
          break;
        }

        const std::uint64_t plan_seed = stable_hash(
            config.base_seed, episode.episode_id, std::string_view("sampling-plan"));
        const SamplingPlan plan = build_sampling_plan(n, plan_seed);
        result.plan.budget_k = plan.budget_k;
        result.plan.num_mandatory = static_cast<int>(plan.mandatory.size());
        result.plan.num_sampled = static_cast<int>(plan.sampled.size());
        result.plan.exhaustive = plan.exhaustive;

        std::vector<Coalition> planned{empty, grand};
        for (const PlanEntry& entry : plan.interior) planned.push_back(entry.coalition);
        prepopulate_cache(*oracle, cache, planned, config.jobs);

        const double v_empty = evaluate_cached(*oracle, empty, cache);
        const double v_full = evaluate_cached(*oracle, grand, cache);
        const std::vector<WeightedCoalitionSample> rows = plan_rows(plan, *oracle, cache);
        KernelShapSolution solution = solve_kernelshap(rows, v_empty, v_full, n);
        result.raw_phi = std::move(solution.phi);
        result.diagnostics = solution.diagnostics;
        break;
      }
    }
  } catch (const OracleError& e) {
    std::vector<Coalition> planned;
    if (config.solver == SolverKind::kKernelShap) {
      const SamplingPlan plan = build_sampling_plan(
          n, stable_hash(config.base_seed, episode.episode_id,
                         std::string_view("sampling-plan")));
      planned.push_back(Coalition::empty_set());
      planned.push_back(Coalition::grand(n));
      for (const PlanEntry& entry : plan.interior) planned.push_back(entry.coalition);
    } else if (config.solver == SolverKind::kExact) {
      planned = all_coalitions(n);
    } else {
      planned.push_back(Coalition::from_mask(e.coalition_mask()));
    }
    throw AttributionError(
        "backend failure on episode " + episode.episode_id + ": " + e.what(),
        unevaluated_masks(planned, cache));
  }

  result.normalized_phi = normalize_rewards(result.raw_phi.values);
  result.plan.num_value_evaluations = static_cast<int>(cache.size());
  return result;
}

int emit_records(const Episode& episode, const AttributionResult& result,
                 std::ostream& out) {
  if (result.episode_id != episode.episode_id)
    throw Error("attribution result does not belong to this episode");
  const int n = episode.num_actions();
  if (result.normalized_phi.size() != n)
    throw Error("attribution result size does not match the episode");

  for (int i = 0; i < n; ++i) {
    const int action_position = episode.agent_action_indices[i];
    nlohmann::ordered_json record;
    record["episode_id"] = episode.episode_id;
    record["action_index"] = i;
    nlohmann::ordered_json context;
    context["scenario"] = episode.scenario;
    context["agent_goal"] = episode.agent_goal;
    context["partner_goal"] = episode.partner_goal;
    nlohmann::ordered_json history = nlohmann::ordered_json::array();
    for (const Turn& t : episode.turns) {
      if (t.position >= action_position) break;
      history.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
    }
    context["history"] = std::move(history);
    record["context"] = std::move(context);
    record["action_text"] = episode.turns[action_position].text;
    record["score"] = result.normalized_phi[i];

    out << record.dump() << '\n';
    if (!out) throw Error("I/O failure while emitting records for " + episode.episode_id);
  }
  return n;
}

nlohmann::ordered_json result_meta_json(const AttributionResult& result) {
  nlohmann::ordered_json j;
  j["episode_id"] = result.episode_id;
  j["config_fingerprint"] = result.config_fingerprint;
  j["n"] = result.plan.n;
  j["raw_phi"] = std::vector<double>(result.raw_phi.values.begin(),
                                     result.raw_phi.values.end());
  j["normalized_phi"] =
      std::vector<double>(result.normalized_phi.begin(), result.normalized_phi.end());
  j["v_empty"] = result.raw_phi.v_empty;
  j["v_full"] = result.raw_phi.v_full;
  j["efficiency_gap"] = result.raw_phi.efficiency_gap();
  j["plan"] = {{"budget_k", result.plan.budget_k},
               {"num_mandatory", result.plan.num_mandatory},
               {"num_sampled", result.plan.num_sampled},
               {"exhaustive", result.plan.exhaustive},
               {"num_value_evaluations", result.plan.num_value_evaluations}};
  if (result.diagnostics) {
    j["diagnostics"] = {
        {"num_rows", result.diagnostics->num_rows},
        {"weighted_rss", result.diagnostics->weighted_residual_sum_of_squares},
        {"condition_warning", result.diagnostics->condition_warning},
        {"ridge_applied", result.diagnostics->ridge_applied}};
  } else {
    j["diagnostics"] = nullptr;
  }
  return j;
}

DatasetManifest emit_dataset(const std::filesystem::path& results_dir,
                             const std::filesystem::path& out_path) {
  std::vector<std::filesystem::path> record_files;
  if (std::filesystem::is_directory(results_dir))
    for (const auto& entry : std::filesystem::directory_iterator(results_dir))
      if (entry.is_regular_file() && entry.path().extension() == ".jsonl")
        record_files.push_back(entry.path());
  if (record_files.empty())
    throw Error("no results: " + results_dir.string() + " holds no .jsonl record files");
  std::sort(record_files.begin(), record_files.end());

  DatasetManifest manifest;
  std::set<std::string> fingerprints;

  std::ofstream out(out_path);
  if (!out) throw Error("cannot open " + out_path.string() + " for writing");
  for (const auto& file : record_files) {
    std::ifstream in(file);
    if (!in) throw Error("cannot read " + file.string());
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      out << line << '\n';
      ++manifest.record_count;
    }
    ++manifest.episode_count;

    auto meta_path = file;
    meta_path.replace_extension(".meta.json");
    if (std::filesystem::exists(meta_path)) {
      std::ifstream meta_in(meta_path);
      nlohmann::json meta = nlohmann::json::parse(meta_in, nullptr, false);
      if (!meta.is_discarded() && meta.contains("config_fingerprint"))
        fingerprints.insert(meta["config_fingerprint"].get<std::string>());
    }
  }
  out.flush();
  if (!out) throw Error("I/O failure while writing " + out_path.string());

  manifest.fingerprints.assign(fingerprints.begin(), fingerprints.end());
  manifest.mixed_fingerprints = fingerprints.size() > 1;

  nlohmann::ordered_json mj;
  mj["episode_count"] = manifest.episode_count;
  mj["record_count"] = manifest.record_count;
  mj["config_fingerprints"] = manifest.fingerprints;
  mj["mixed_fingerprints"] = manifest.mixed_fingerprints;
  std::ofstream mout(out_path.string() + ".manifest.json");
  mout << mj.dump(2) << '\n';
  return manifest;
}

}  // namespace savoir
