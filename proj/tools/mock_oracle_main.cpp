// Reference oracle peer for the line-delimited JSON protocol. Replays the
// simulated game for any episode generated with the same game seed, and
// offers fault-injection switches for exercising client code.

#include <iostream>

#include <CLI11.hpp>

#include "savoir/oracle_server.hpp"

int main(int argc, char** argv) {
  CLI::App app{"savoir-mock-oracle: scripted peer for the rollout-oracle wire protocol"};

  savoir::OracleServerOptions options;
  int listen_port = -1;
  int delay_first_ms = 0;
  double constant_total = 0.0;
  bool has_constant = false;

  app.add_option("--n", options.n, "Number of agent actions in the replayed game")
      ->required();
  app.add_option("--game-seed", options.game_seed, "Game generation seed")
      ->capture_default_str();
  app.add_option("--sigma", options.game.sigma, "Rollout noise std")
      ->capture_default_str();
  app.add_option("--gamma", options.game.gamma, "Per-action partner gain")
      ->capture_default_str();
  app.add_option("--synergy", options.game.synergy_scale, "Pairwise synergy scale")
      ->capture_default_str();
  app.add_option("--jitter", options.game.base_jitter, "Base value jitter")
      ->capture_default_str();
  app.add_option("--listen", listen_port,
                 "Serve one TCP client on this port (0 picks one) instead of stdio");

  app.add_option("--constant", constant_total,
                 "Report this fixed total utility for every request")
      ->each([&](const std::string&) { has_constant = true; });
  app.add_option("--fail-first", options.fail_first,
                 "Answer the first k requests with an error object")
      ->capture_default_str();
  app.add_option("--drop-first", options.drop_first, "Never answer the first k requests")
      ->capture_default_str();
  app.add_option("--delay-first-ms", delay_first_ms,
                 "Sleep this long before answering the first request")
      ->capture_default_str();
  app.add_flag("--shuffle-pairs", options.shuffle_pairs,
               "Answer every pair of requests in reversed order");
  app.add_flag("--stale-noise", options.stale_noise,
               "Precede each answer with a response no one asked for");
  app.add_flag("--out-of-range", options.out_of_range, "Report scores outside [0, 10]");
  app.add_flag("--malformed", options.malformed, "Emit unparsable response lines");

  CLI11_PARSE(app, argc, argv);

  options.delay_first = std::chrono::milliseconds(delay_first_ms);
  if (has_constant) options.constant_total = constant_total;

  try {
    savoir::SimOracleServer server(options);
    if (listen_port >= 0) {
      savoir::TcpOracleListener listener(listen_port);
      std::cerr << "listening on 127.0.0.1:" << listener.port() << '\n';
      listener.serve(server, true);
    } else {
      savoir::serve_stdio(server);
    }
  } catch (const savoir::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
