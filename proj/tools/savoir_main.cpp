#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <thread>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "savoir/oracle_server.hpp"
#include "savoir/validation.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitParse = 2;
constexpr int kExitBackend = 3;
constexpr int kExitSolver = 4;

struct CliOptions {
  std::string solver = "kernelshap";
  std::string backend = "sim";
  std::uint64_t seed = 0;
  int jobs = 1;
  int j_rollouts = 2;
  int num_permutations = 200;
  int max_future_turns = 20;
  std::string weights = "goal=0.5,relationship=0.3,knowledge=0.2";

  std::uint64_t sim_game_seed = 0;
  double sim_sigma = 0.0;
  double sim_gamma = 0.05;
  double sim_synergy = 0.05;
  double sim_jitter = 0.01;
  bool sim_iid_bases = false;

  std::string ext_transport = "stdio-subprocess";
  std::string ext_endpoint;
  int ext_timeout_ms = 5000;
  int ext_max_retries = 1;
  int ext_max_in_flight = 4;

  bool verbose = false;
};

savoir::UtilityWeights parse_weights(const std::string& text) {
  savoir::UtilityWeights weights;
  std::istringstream in(text);
  std::string part;
  while (std::getline(in, part, ',')) {
    const std::size_t eq = part.find('=');
    if (eq == std::string::npos)
      throw savoir::Error("weights must be key=value pairs, got \"" + part + "\"");
    weights.weights[part.substr(0, eq)] = std::stod(part.substr(eq + 1));
  }
  weights.validate();
  return weights;
}

savoir::AttributionConfig build_config(const CliOptions& opt) {
  savoir::AttributionConfig config;
  config.solver = savoir::parse_solver(opt.solver);
  config.backend = savoir::parse_backend(opt.backend);
  config.base_seed = opt.seed;
  config.jobs = opt.jobs;
  config.j_rollouts = opt.j_rollouts;
  config.num_permutations = opt.num_permutations;
  config.max_future_turns = opt.max_future_turns;
  config.utility_weights = parse_weights(opt.weights);

  config.sim.game_seed = opt.sim_game_seed;
  config.sim.game.sigma = opt.sim_sigma;
  config.sim.game.gamma = opt.sim_gamma;
  config.sim.game.synergy_scale = opt.sim_synergy;
  config.sim.game.base_jitter = opt.sim_jitter;
  config.sim.game.spread_bases = !opt.sim_iid_bases;

  config.external.transport = [&] {
    if (opt.ext_transport == "tcp") return savoir::ExternalOracleConfig::Transport::kTcp;
    if (opt.ext_transport == "stdio-subprocess")
      return savoir::ExternalOracleConfig::Transport::kStdioSubprocess;
    throw savoir::Error("unknown transport \"" + opt.ext_transport +
                        "\" (expected stdio-subprocess|tcp)");
  }();
  config.external.endpoint = opt.ext_endpoint;
  if (config.external.endpoint.empty()) {
    // flag wins over the environment
    if (const char* env = std::getenv("SAVOIR_ORACLE_ENDPOINT"))
      config.external.endpoint = env;
  }
  config.external.request_timeout = std::chrono::milliseconds(opt.ext_timeout_ms);
  config.external.max_retries = opt.ext_max_retries;
  config.external.max_in_flight = opt.ext_max_in_flight;
  return config;
}

void add_shared_options(CLI::App& app, CliOptions& opt) {
  app.add_option("--solver", opt.solver, "Attribution solver")
      ->check(CLI::IsMember({"exact", "permutation", "kernelshap"}))
      ->capture_default_str();
  app.add_option("--backend", opt.backend, "Coalition value backend")
      ->check(CLI::IsMember({"sim", "external"}))
      ->capture_default_str();
  app.add_option("--seed", opt.seed, "Base seed for all derived randomness")
      ->capture_default_str();
  app.add_option("--jobs", opt.jobs, "Coalition evaluation parallelism (no output effect)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--j", opt.j_rollouts, "Rollouts per coalition (J)")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--num-permutations", opt.num_permutations,
                 "Sampled permutations for the permutation solver")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--max-future-turns", opt.max_future_turns,
                 "Rollout horizon after the reconstructed history")
      ->capture_default_str();
  app.add_option("--weights", opt.weights,
                 "Utility dimension weights as key=value pairs")
      ->capture_default_str();

  app.add_option("--sim.game-seed", opt.sim_game_seed, "Sim backend: game generation seed")
      ->capture_default_str();
  app.add_option("--sim.sigma", opt.sim_sigma, "Sim backend: rollout noise std")
      ->capture_default_str();
  app.add_option("--sim.gamma", opt.sim_gamma, "Sim backend: per-action partner gain")
      ->capture_default_str();
  app.add_option("--sim.synergy", opt.sim_synergy, "Sim backend: pairwise synergy scale")
      ->capture_default_str();
  app.add_option("--sim.jitter", opt.sim_jitter, "Sim backend: base value jitter")
      ->capture_default_str();
  app.add_flag("--sim.iid-bases", opt.sim_iid_bases,
               "Sim backend: iid uniform base values instead of a spread grid");

  app.add_option("--external.transport", opt.ext_transport,
                 "External oracle transport")
      ->check(CLI::IsMember({"stdio-subprocess", "tcp"}))
      ->capture_default_str();
  app.add_option("--external.endpoint", opt.ext_endpoint,
                 "Command line (stdio-subprocess) or host:port (tcp); "
                 "SAVOIR_ORACLE_ENDPOINT is the fallback");
  app.add_option("--external.timeout-ms", opt.ext_timeout_ms,
                 "Per-request timeout in milliseconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--external.max-retries", opt.ext_max_retries,
                 "Retries per rollout request")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  app.add_option("--external.max-in-flight", opt.ext_max_in_flight,
                 "Concurrent outstanding requests")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();

  app.add_flag("--verbose", opt.verbose, "Print per-episode diagnostics");
}

int worse(int a, int b) { return std::max(a, b); }

struct EpisodeOutcome {
  int code = kExitOk;
  std::string summary;  // stdout line(s)
  std::string failure;  // stderr line(s)
};

EpisodeOutcome attribute_one(const std::string& input,
                             const savoir::AttributionConfig& config,
                             const std::string& out_dir, bool verbose) {
  EpisodeOutcome outcome;
  try {
    const savoir::Episode episode = savoir::load_episode(input);
    const savoir::AttributionResult result = savoir::attribute_episode(episode, config);

    const std::filesystem::path records_path =
        std::filesystem::path(out_dir) / (episode.episode_id + ".jsonl");
    std::ofstream records(records_path);
    if (!records) throw savoir::Error("cannot open " + records_path.string());
    const int count = savoir::emit_records(episode, result, records);
    records.flush();
    if (!records) throw savoir::Error("write failure on " + records_path.string());

    std::ofstream meta(std::filesystem::path(out_dir) /
                       (episode.episode_id + ".meta.json"));
    meta << savoir::result_meta_json(result).dump(2) << '\n';

    std::ostringstream line;
    line << episode.episode_id << ": n=" << result.plan.n
         << " solver=" << savoir::to_string(config.solver) << " K=" << result.plan.budget_k
         << " evals=" << result.plan.num_value_evaluations << " records=" << count
         << " sum_phi=" << std::setprecision(6) << result.raw_phi.values.sum()
         << " v(N)-v(0)=" << result.raw_phi.v_full - result.raw_phi.v_empty
         << " efficiency_gap=" << std::setprecision(3)
         << result.raw_phi.efficiency_gap();
    if (result.diagnostics)
      line << " wrss=" << result.diagnostics->weighted_residual_sum_of_squares;
    line << '\n';
    if (verbose) line << "  fingerprint=" << result.config_fingerprint << '\n';
    outcome.summary = line.str();
  } catch (const savoir::ParseError& e) {
    outcome.code = kExitParse;
    outcome.failure = "parse failure: " + input + ": " + e.what() + "\n";
  } catch (const savoir::AttributionError& e) {
    outcome.code = kExitBackend;
    std::ostringstream line;
    line << "backend failure: " << input << ": " << e.what() << '\n';
    if (!e.unevaluated_masks().empty()) {
      line << "  unevaluated masks:";
      for (std::uint64_t mask : e.unevaluated_masks()) line << ' ' << mask;
      line << '\n';
    }
    outcome.failure = line.str();
  } catch (const savoir::RankDeficiencyError& e) {
    outcome.code = kExitSolver;
    outcome.failure = "solver failure: " + input + ": " + e.what() + "\n";
  } catch (const savoir::BudgetError& e) {
    outcome.code = kExitSolver;
    outcome.failure = "solver failure: " + input + ": " + e.what() + "\n";
  } catch (const savoir::Error& e) {
    outcome.code = kExitFailure;
    outcome.failure = "failure: " + input + ": " + e.what() + "\n";
  }
  return outcome;
}

int cmd_attribute(const CliOptions& opt, const std::vector<std::string>& inputs,
                  const std::string& out_dir) {
  const savoir::AttributionConfig config = build_config(opt);
  std::filesystem::create_directories(out_dir);

  // Episode-level parallelism. Output files and summaries are a pure
  // function of (episode, config), so the pool width cannot change them;
  // summaries print in input order.
  std::vector<EpisodeOutcome> outcomes(inputs.size());
  const int width =
      config.backend == savoir::BackendKind::kSim
          ? std::min<int>(opt.jobs, static_cast<int>(inputs.size()))
          : 1;  // one wire channel; keep external runs serial
  if (width <= 1) {
    for (std::size_t i = 0; i < inputs.size(); ++i)
      outcomes[i] = attribute_one(inputs[i], config, out_dir, opt.verbose);
  } else {
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= inputs.size()) return;
        outcomes[i] = attribute_one(inputs[i], config, out_dir, opt.verbose);
      }
    };
    std::vector<std::thread> pool;
    for (int t = 0; t < width; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }

  int exit_code = kExitOk;
  int failures = 0;
  for (const EpisodeOutcome& outcome : outcomes) {
    std::cout << outcome.summary;
    std::cerr << outcome.failure;
    exit_code = worse(exit_code, outcome.code);
    if (outcome.code != kExitOk) ++failures;
  }
  if (failures > 0)
    std::cerr << failures << " of " << inputs.size() << " episodes failed\n";
  return exit_code;
}

int cmd_validate(const CliOptions& opt, int seeds, int trials, int convergence_seeds,
                 bool skip_protocol, const std::string& report_path) {
  savoir::ValidationOptions options;
  options.equivalence_seeds = seeds;
  options.fidelity_trials = trials;
  options.convergence_seeds = convergence_seeds;
  options.include_protocol = !skip_protocol;
  if (opt.seed != 0) options.seed = opt.seed;

  const std::vector<savoir::ValidationCheck> checks =
      savoir::run_validation_battery(options);
  bool all_passed = true;
  for (const savoir::ValidationCheck& check : checks) {
    all_passed = all_passed && check.passed;
    std::cout << check.name << " = " << std::setprecision(6) << check.measured
              << " (threshold " << check.threshold << ", "
              << (check.passed ? "pass" : "FAIL") << ", " << std::fixed
              << std::setprecision(0) << check.elapsed_ms << " ms)\n"
              << std::defaultfloat;
    if (opt.verbose) std::cout << "  " << check.details << '\n';
  }
  std::cout << (all_passed ? "all checks passed" : "CHECKS FAILED") << '\n';

  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << savoir::validation_report(checks).dump(2) << '\n';
  }
  return all_passed ? kExitOk : kExitFailure;
}

int cmd_bench_sampler(const CliOptions& opt, int n_min, int n_max, int trials,
                      const std::string& report_path) {
  using namespace savoir;
  nlohmann::ordered_json report = nlohmann::ordered_json::array();
  std::cout << "  n    K  rows  mean_err   max_err  argmax\n";
  for (int n = n_min; n <= n_max; ++n) {
    double err_sum = 0.0;
    double err_max = 0.0;
    int argmax_hits = 0;
    int distinct_rows = 0;
    SimGameParams params;
    params.synergy_scale = opt.sim_synergy;
    params.gamma = opt.sim_gamma;
    int budget = 0;
    for (int t = 0; t < trials; ++t) {
      const SimGameSpec spec = SimGameSpec::seeded(
          n, stable_hash(opt.seed, std::string_view("bench"),
                         static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)),
          params);
      auto oracle = analytic_sim_oracle(spec);
      const SamplingPlan plan = build_sampling_plan(
          n, stable_hash(opt.seed, std::string_view("bench-plan"),
                         static_cast<std::uint64_t>(n), static_cast<std::uint64_t>(t)));
      budget = plan.budget_k;
      distinct_rows += static_cast<int>(plan.interior.size());
      ValueCache cache;
      const double v_empty = evaluate_cached(*oracle, Coalition::empty_set(), cache);
      const double v_full = evaluate_cached(*oracle, Coalition::grand(n), cache);
      const auto rows = plan_rows(plan, *oracle, cache);
      const ShapleyVector plan_phi = solve_kernelshap(rows, v_empty, v_full, n).phi;
      const ShapleyVector exact = exact_shapley(*oracle);
      const double err = (plan_phi.values - exact.values).cwiseAbs().mean();
      err_sum += err;
      err_max = std::max(err_max, (plan_phi.values - exact.values).cwiseAbs().maxCoeff());
      Eigen::Index a, b;
      plan_phi.values.maxCoeff(&a);
      exact.values.maxCoeff(&b);
      if (a == b) ++argmax_hits;
    }
    const double mean_err = err_sum / trials;
    const double argmax_rate = static_cast<double>(argmax_hits) / trials;
    std::cout << std::setw(3) << n << ' ' << std::setw(4) << budget << ' '
              << std::setw(5) << distinct_rows / trials << "  " << std::scientific
              << std::setprecision(2) << mean_err << "  " << err_max << "  "
              << std::defaultfloat << std::setprecision(3) << argmax_rate << '\n';
    report.push_back({{"n", n},
                      {"budget_k", budget},
                      {"mean_rows", distinct_rows / trials},
                      {"mean_err", mean_err},
                      {"max_err", err_max},
                      {"argmax_rate", argmax_rate}});
  }
  if (!report_path.empty()) {
    std::ofstream out(report_path);
    out << report.dump(2) << '\n';
  }
  return kExitOk;
}

int cmd_emit_dataset(const std::string& results_dir, const std::string& out_path) {
  try {
    const savoir::DatasetManifest manifest =
        savoir::emit_dataset(results_dir, out_path);
    std::cout << "episodes=" << manifest.episode_count
              << " records=" << manifest.record_count
              << " fingerprints=" << manifest.fingerprints.size() << '\n';
    if (manifest.mixed_fingerprints)
      std::cerr << "warning: records were produced under "
                << manifest.fingerprints.size() << " distinct configs\n";
    return kExitOk;
  } catch (const savoir::Error& e) {
    std::cerr << e.what() << '\n';
    return kExitFailure;
  }
}

int cmd_sim_demo(const CliOptions& opt, int num_episodes, int min_actions,
                 int max_actions, const std::string& out_dir, bool run_attribution) {
  using namespace savoir;
  if (min_actions < 1 || max_actions < min_actions)
    throw Error("invalid action count range");
  std::filesystem::create_directories(out_dir);

  const AttributionConfig config = build_config(opt);
  std::vector<std::string> files;
  for (int i = 0; i < num_episodes; ++i) {
    const int n = min_actions + (max_actions > min_actions
                                     ? i % (max_actions - min_actions + 1)
                                     : 0);
    char suffix[16];
    std::snprintf(suffix, sizeof suffix, "%03d", i);
    const std::string episode_id = "sim-ep-" + std::string(suffix);
    const SimGameSpec spec =
        sim_spec_for_episode(episode_id, config.sim.game_seed, n, config.sim.game);
    const Episode episode = make_sim_episode(spec, episode_id);
    const std::filesystem::path path =
        std::filesystem::path(out_dir) / (episode_id + ".json");
    save_episode(episode, path);
    files.push_back(path.string());
    std::cout << "wrote " << path.string() << " (n=" << n << ")\n";
  }

  if (run_attribution)
    return cmd_attribute(opt, files, (std::filesystem::path(out_dir) / "results").string());
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"savoir: Shapley-value credit assignment for multi-turn agent episodes"};
  app.set_config("--config", "", "key = value config file with [sim]/[external] sections");

  CliOptions opt;
  add_shared_options(app, opt);
  app.require_subcommand(1);

  auto* attribute = app.add_subcommand(
      "attribute", "Attribute episodes and emit per-action reward records");
  attribute->fallthrough();
  std::vector<std::string> episode_inputs;
  std::string out_path = "results";
  attribute->add_option("episodes", episode_inputs, "Episode JSON files")
      ->required()
      ->check(CLI::ExistingFile);
  attribute->add_option("--out", out_path, "Output directory for records + meta")
      ->capture_default_str();

  auto* validate =
      app.add_subcommand("validate", "Run the property battery and report pass/fail");
  validate->fallthrough();
  int validate_seeds = 50;
  int validate_trials = 100;
  int validate_convergence = 30;
  bool skip_protocol = false;
  std::string report_path;
  validate->add_option("--seeds", validate_seeds, "Seeded games per property")
      ->capture_default_str();
  validate->add_option("--trials", validate_trials, "Sampled-plan fidelity trials per n")
      ->capture_default_str();
  validate->add_option("--convergence-seeds", validate_convergence,
                       "Seeds for the permutation-estimator comparison")
      ->capture_default_str();
  validate->add_flag("--skip-protocol", skip_protocol,
                     "Skip the in-process wire-protocol checks");
  validate->add_option("--report", report_path, "Write the machine-readable report here");

  auto* bench = app.add_subcommand(
      "bench-sampler", "Measure sampled-plan accuracy against the exact solver");
  bench->fallthrough();
  int bench_n_min = 8;
  int bench_n_max = 12;
  int bench_trials = 20;
  std::string bench_report;
  bench->add_option("--n-min", bench_n_min, "Smallest game size")->capture_default_str();
  bench->add_option("--n-max", bench_n_max, "Largest game size")->capture_default_str();
  bench->add_option("--trials", bench_trials, "Games per size")->capture_default_str();
  bench->add_option("--report", bench_report, "Write JSON results here");

  auto* emit = app.add_subcommand(
      "emit-dataset", "Concatenate per-episode records into one dataset + manifest");
  emit->fallthrough();
  std::string results_dir;
  std::string dataset_out = "dataset.jsonl";
  emit->add_option("--results", results_dir, "Directory of per-episode .jsonl files")
      ->required();
  emit->add_option("--out", dataset_out, "Dataset output path")->capture_default_str();

  auto* demo = app.add_subcommand(
      "sim-demo", "Generate a deterministic simulated episode corpus");
  demo->fallthrough();
  int demo_episodes = 5;
  int demo_min_actions = 7;
  int demo_max_actions = 12;
  std::string demo_out = "sim-corpus";
  bool demo_attribute = false;
  demo->add_option("--num-episodes", demo_episodes, "Episodes to generate")
      ->capture_default_str();
  demo->add_option("--min-actions", demo_min_actions, "Smallest agent action count")
      ->capture_default_str();
  demo->add_option("--max-actions", demo_max_actions, "Largest agent action count")
      ->capture_default_str();
  demo->add_option("--out", demo_out, "Corpus output directory")->capture_default_str();
  demo->add_flag("--attribute", demo_attribute, "Also attribute the generated corpus");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*attribute) return cmd_attribute(opt, episode_inputs, out_path);
    if (*validate)
      return cmd_validate(opt, validate_seeds, validate_trials, validate_convergence,
                          skip_protocol, report_path);
    if (*bench) return cmd_bench_sampler(opt, bench_n_min, bench_n_max, bench_trials,
                                         bench_report);
    if (*emit) return cmd_emit_dataset(results_dir, dataset_out);
    if (*demo)
      return cmd_sim_demo(opt, demo_episodes, demo_min_actions, demo_max_actions,
                          demo_out, demo_attribute);
  } catch (const savoir::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitFailure;
  }
  return kExitFailure;
}
