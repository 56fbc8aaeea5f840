#pragma once

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include "savoir/sim_game.hpp"

namespace savoir {

// Behavior of a reference oracle peer. By default it replays the simulated
// game: the realized coalition is read from the "[a<i>]" tags in the request
// history, valued with sim_expected_value plus seeded noise, and split across
// dimensions exactly like the in-process sim scorer, so a wire-path
// attribution matches the in-process path bit for bit. The fault-injection
// switches exist to exercise client timeout, retry, reordering, and
// validation handling.
struct OracleServerOptions {
  int n = 0;  // players of the game being replayed
  std::uint64_t game_seed = 0;
  SimGameParams game;
  UtilityWeights weights = UtilityWeights::sotopia_default();

  // Fixed total utility instead of the sim game value (constant server).
  std::optional<double> constant_total;

  int fail_first = 0;    // answer the first k requests with an error object
  int drop_first = 0;    // never answer the first k requests
  std::chrono::milliseconds delay_first{0};  // sleep before the first answer
  bool shuffle_pairs = false;  // hold every odd request, answer pairs reversed
  bool stale_noise = false;    // precede each answer with an unknown-id response
  bool out_of_range = false;   // report a score outside [0, 10]
  bool malformed = false;      // emit an unparsable line
};

class SimOracleServer {
 public:
  explicit SimOracleServer(OracleServerOptions options);

  // Responses to emit after consuming one request line: zero (held or
  // dropped), one, or two (a shuffled pair, reversed).
  std::vector<std::string> handle_line(const std::string& line);

  // Any response still held by pair shuffling.
  std::vector<std::string> flush();

 private:
  std::string respond(const std::string& line);

  OracleServerOptions options_;
  int requests_seen_ = 0;
  std::vector<std::string> held_;
};

// Blocking request loop over stdin/stdout; returns at EOF.
void serve_stdio(SimOracleServer& server);

// Single-client TCP server. Binds at construction (port 0 picks an ephemeral
// port) so tests can learn the port before serving.
class TcpOracleListener {
 public:
  explicit TcpOracleListener(int port);
  ~TcpOracleListener();

  int port() const { return port_; }

  // Accepts one client and serves it until disconnect. `accept_loop` keeps
  // accepting further clients (a restarting client reconnects).
  void serve(SimOracleServer& server, bool accept_loop = true);

  // Unblocks a serve() running in another thread.
  void shutdown();

 private:
  int listen_fd_ = -1;
  int port_ = 0;
};

}  // namespace savoir
