#pragma once

#include <chrono>
#include <memory>
#include <optional>
#include <string>

#include "savoir/rollout.hpp"

namespace savoir {

// Transport failure distinct from protocol-level errors; the client converts
// it into a retry or an OracleError carrying the coalition mask.
class ChannelError : public Error {
 public:
  using Error::Error;
};

// One line-delimited text connection to an oracle peer.
class LineChannel {
 public:
  virtual ~LineChannel() = default;

  virtual void send_line(const std::string& line) = 0;

  // Waits up to `timeout` for one complete line (without the newline).
  // nullopt on timeout; ChannelError when the peer is gone.
  virtual std::optional<std::string> recv_line(std::chrono::milliseconds timeout) = 0;

  // Re-establishes the connection (respawn the child / reconnect the socket).
  virtual void restart() = 0;
};

struct ExternalOracleConfig {
  enum class Transport { kStdioSubprocess, kTcp };

  Transport transport = Transport::kStdioSubprocess;
  // Command line (whitespace-separated) for stdio-subprocess, host:port for tcp.
  std::string endpoint;
  std::chrono::milliseconds request_timeout{5000};
  int max_retries = 1;
  int max_in_flight = 4;
  double score_min = 0.0;
  double score_max = 10.0;

  void validate() const;
};

std::unique_ptr<LineChannel> open_channel(const ExternalOracleConfig& config);

// Wire-protocol value oracle for one episode. Each coalition evaluation
// sends one request per rollout (request_id-matched, so responses may arrive
// in any order) and averages the aggregated dimension scores. Requests carry
// rollout_seed = stable_hash(base_seed, episode_id, mask, rollout_index);
// a conforming peer answers identical requests identically, which makes
// timeout retries safe. A coalition either completes fully or fails with the
// offending mask; nothing partial is ever returned.
class ExternalValueOracle final : public ValueOracle {
 public:
  ExternalValueOracle(const ExternalOracleConfig& config, Episode episode,
                      UtilityWeights weights, int j_rollouts, std::uint64_t base_seed);
  // Takes ownership of an already-open channel (used by in-process tests).
  ExternalValueOracle(std::unique_ptr<LineChannel> channel, ExternalOracleConfig config,
                      Episode episode, UtilityWeights weights, int j_rollouts,
                      std::uint64_t base_seed);
  ~ExternalValueOracle() override;

  int num_players() const override { return episode_.num_actions(); }
  ValueSample evaluate(Coalition coalition) override;
  bool concurrent_safe() const override { return false; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  Episode episode_;
};

std::shared_ptr<ValueOracle> external_value_oracle(const ExternalOracleConfig& config,
                                                   const Episode& episode,
                                                   const UtilityWeights& weights,
                                                   int j_rollouts,
                                                   std::uint64_t base_seed);

}  // namespace savoir
