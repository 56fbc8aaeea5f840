#include <doctest.h>

#include <thread>

#include "savoir/external_oracle.hpp"
#include "savoir/oracle_server.hpp"
#include "support.hpp"

using namespace savoir;

namespace {

constexpr int kPlayers = 4;
constexpr std::uint64_t kGameSeed = 606;

struct Fixture {
  SimGameSpec spec = sim_spec_for_episode("wire", kGameSeed, kPlayers, {});
  Episode episode = make_sim_episode(spec, "wire");
  UtilityWeights weights = UtilityWeights::sotopia_default();
};

struct ServerThread {
  TcpOracleListener listener{0};
  SimOracleServer server;
  std::thread thread;

  explicit ServerThread(OracleServerOptions options) : server(std::move(options)) {
    thread = std::thread([this] { listener.serve(server, true); });
  }

  ~ServerThread() {
    listener.shutdown();
    thread.join();
  }

  ExternalOracleConfig client_config() const {
    ExternalOracleConfig config;
    config.transport = ExternalOracleConfig::Transport::kTcp;
    config.endpoint = "127.0.0.1:" + std::to_string(listener.port());
    config.request_timeout = std::chrono::milliseconds(500);
    config.max_retries = 1;
    return config;
  }
};

OracleServerOptions sim_server_options() {
  OracleServerOptions options;
  options.n = kPlayers;
  options.game_seed = kGameSeed;
  return options;
}

}  // namespace

TEST_CASE("tcp client averages constant responses") {
  Fixture fx;
  auto options = sim_server_options();
  options.constant_total = 6.8;
  ServerThread server(options);

  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 2, 1);
  const ValueSample sample = oracle->evaluate(Coalition::from_mask(0b0101));
  CHECK(sample.value == doctest::Approx(6.8).epsilon(1e-12));
  CHECK(sample.num_rollouts_used == 2);
}

TEST_CASE("tcp client replays the simulated game over the wire") {
  Fixture fx;
  ServerThread server(sim_server_options());
  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 2, 1);
  for (std::uint64_t mask : {0b0000ull, 0b0001ull, 0b1010ull, 0b1111ull}) {
    const Coalition c = Coalition::from_mask(mask);
    CHECK(oracle->evaluate(c).value ==
          doctest::Approx(sim_expected_value(fx.spec, c)).epsilon(1e-12));
  }
}

TEST_CASE("one transient failure is retried to success") {
  Fixture fx;
  auto options = sim_server_options();
  options.fail_first = 1;
  ServerThread server(options);
  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 1, 1);
  const Coalition c = Coalition::singleton(0);
  CHECK(oracle->evaluate(c).value ==
        doctest::Approx(sim_expected_value(fx.spec, c)).epsilon(1e-12));
}

TEST_CASE("exhausted retries raise a remote error carrying the mask") {
  Fixture fx;
  auto options = sim_server_options();
  options.fail_first = 1000;
  ServerThread server(options);
  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 1, 1);
  try {
    oracle->evaluate(Coalition::from_mask(0b0110));
    FAIL("expected an OracleError");
  } catch (const OracleError& e) {
    CHECK(e.kind() == OracleError::Kind::kRemote);
    CHECK(e.coalition_mask() == 0b0110);
  }
}

TEST_CASE("malformed response lines fail the coalition immediately") {
  Fixture fx;
  auto options = sim_server_options();
  options.malformed = true;
  ServerThread server(options);
  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 1, 1);
  try {
    oracle->evaluate(Coalition::from_mask(0b0011));
    FAIL("expected an OracleError");
  } catch (const OracleError& e) {
    CHECK(e.kind() == OracleError::Kind::kMalformed);
    CHECK(e.coalition_mask() == 0b0011);
  }
}

TEST_CASE("out-of-range scores are rejected as malformed") {
  Fixture fx;
  auto options = sim_server_options();
  options.out_of_range = true;
  ServerThread server(options);
  auto oracle =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 1, 1);
  CHECK_THROWS_AS(oracle->evaluate(Coalition::singleton(2)), OracleError);
}

TEST_CASE("responses are matched by request id, not arrival order") {
  Fixture fx;
  auto options = sim_server_options();
  options.shuffle_pairs = true;
  options.stale_noise = true;
  ServerThread server(options);
  auto config = server.client_config();
  config.max_in_flight = 8;
  auto oracle = external_value_oracle(config, fx.episode, fx.weights, 2, 1);
  const Coalition c = Coalition::from_mask(0b1001);
  CHECK(oracle->evaluate(c).value ==
        doctest::Approx(sim_expected_value(fx.spec, c)).epsilon(1e-12));
}

TEST_CASE("an unreachable endpoint surfaces as a connection error") {
  Fixture fx;
  ExternalOracleConfig config;
  config.transport = ExternalOracleConfig::Transport::kTcp;
  config.endpoint = "127.0.0.1:1";  // nothing listens there
  config.request_timeout = std::chrono::milliseconds(200);
  config.max_retries = 0;
  CHECK_THROWS_AS(external_value_oracle(config, fx.episode, fx.weights, 1, 1),
                  ChannelError);
}

TEST_CASE("stdio subprocess transport replays the simulated game") {
  Fixture fx;
  ExternalOracleConfig config;
  config.transport = ExternalOracleConfig::Transport::kStdioSubprocess;
  config.endpoint = std::string(SAVOIR_MOCK_BIN) + " --n " +
                    std::to_string(kPlayers) + " --game-seed " +
                    std::to_string(kGameSeed);
  config.request_timeout = std::chrono::milliseconds(2000);
  auto oracle = external_value_oracle(config, fx.episode, fx.weights, 2, 1);
  for (std::uint64_t mask : {0b0000ull, 0b0110ull, 0b1111ull}) {
    const Coalition c = Coalition::from_mask(mask);
    CHECK(oracle->evaluate(c).value ==
          doctest::Approx(sim_expected_value(fx.spec, c)).epsilon(1e-12));
  }
}

TEST_CASE("identical requests yield identical responses across reconnects") {
  Fixture fx;
  ServerThread server(sim_server_options());  // serves one client at a time
  const Coalition c = Coalition::from_mask(0b1100);
  auto first =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 2, 9);
  const double a = first->evaluate(c).value;
  first.reset();  // disconnect so the listener can take the next client
  auto second =
      external_value_oracle(server.client_config(), fx.episode, fx.weights, 2, 9);
  const double b = second->evaluate(c).value;
  CHECK(a == b);
}
