#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include <nlohmann/json_fwd.hpp>

#include "savoir/external_oracle.hpp"
#include "savoir/kernelshap.hpp"
#include "savoir/sim_game.hpp"

namespace savoir {

enum class SolverKind { kExact, kPermutation, kKernelShap };
enum class BackendKind { kSim, kExternal };

std::string to_string(SolverKind solver);
std::string to_string(BackendKind backend);
SolverKind parse_solver(const std::string& name);
BackendKind parse_backend(const std::string& name);

struct SimBackendConfig {
  std::uint64_t game_seed = 0;
  SimGameParams game;
};

struct AttributionConfig {
  SolverKind solver = SolverKind::kKernelShap;
  int j_rollouts = 2;          // rollouts per coalition
  int num_permutations = 200;  // permutation solver only
  std::uint64_t base_seed = 0;
  UtilityWeights utility_weights = UtilityWeights::sotopia_default();
  int max_future_turns = 20;
  int jobs = 1;  // coalition evaluation parallelism; no effect on results
  BackendKind backend = BackendKind::kSim;
  SimBackendConfig sim;
  ExternalOracleConfig external;

  void validate() const;

  // Stable 16-hex digest of everything that influences outputs (jobs is
  // excluded). Identical fingerprint + identical episode => identical bytes.
  std::string fingerprint() const;
};

struct PlanSummary {
  int n = 0;
  int budget_k = 0;
  int num_mandatory = 0;
  int num_sampled = 0;
  bool exhaustive = false;
  int num_value_evaluations = 0;
};

struct AttributionResult {
  std::string episode_id;
  ShapleyVector raw_phi;
  Eigen::VectorXd normalized_phi;  // in [0, 10]
  PlanSummary plan;
  std::optional<RegressionDiagnostics> diagnostics;  // kernelshap only
  std::string config_fingerprint;
};

// Backend or solver failure with the planned-but-unevaluated coalition masks,
// so a caller can resume against an idempotent oracle.
class AttributionError : public Error {
 public:
  AttributionError(const std::string& what, std::vector<std::uint64_t> unevaluated)
      : Error(what), unevaluated_masks_(std::move(unevaluated)) {}

  const std::vector<std::uint64_t>& unevaluated_masks() const { return unevaluated_masks_; }

 private:
  std::vector<std::uint64_t> unevaluated_masks_;
};

// Min-max scaling to [0, 10]. A degenerate range (all values equal, or a
// single value) maps everything to the midpoint 5.0. Rejects non-finite
// input.
Eigen::VectorXd normalize_rewards(const Eigen::VectorXd& raw);

// The full reward computation for one episode: sampling plan (or
// enumeration), coalition valuation through the cache, the configured
// solver, and normalization. A pure function of (episode, config).
AttributionResult attribute_episode(const Episode& episode, const AttributionConfig& config);

// One JSONL training record per agent action, in action order: the context
// (scenario, goals, and all turns strictly before the action), the action
// text, and its normalized score. Returns the record count.
int emit_records(const Episode& episode, const AttributionResult& result, std::ostream& out);

// Raw values and solver diagnostics, kept out of the training records.
nlohmann::ordered_json result_meta_json(const AttributionResult& result);

struct DatasetManifest {
  int episode_count = 0;
  int record_count = 0;
  std::vector<std::string> fingerprints;  // distinct, sorted
  bool mixed_fingerprints = false;
};

// Concatenates per-episode record files (sorted by filename) into one
// dataset and writes `<out>.manifest.json` beside it. Fails when the results
// directory holds no record files.
DatasetManifest emit_dataset(const std::filesystem::path& results_dir,
                             const std::filesystem::path& out_path);

// The value oracle the config's backend prescribes for this episode.
std::shared_ptr<ValueOracle> make_backend_oracle(const Episode& episode,
                                                 const AttributionConfig& config);

}  // namespace savoir
