#include "savoir/external_oracle.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <deque>
#include <map>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace savoir {

namespace {

using Clock = std::chrono::steady_clock;

// Line-buffered reads over a poll-able file descriptor.
class FdLineReader {
 public:
  void reset() { buffer_.clear(); }

  std::optional<std::string> recv_line(int fd, std::chrono::milliseconds timeout) {
    const auto deadline = Clock::now() + timeout;
    for (;;) {
      if (auto line = take_line()) return line;
      const auto remaining =
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
      if (remaining.count() <= 0) return std::nullopt;

      pollfd pfd{fd, POLLIN, 0};
      const int rc = ::poll(&pfd, 1, static_cast<int>(remaining.count()));
      if (rc < 0) {
        if (errno == EINTR) continue;
        throw ChannelError(std::string("poll failed: ") + std::strerror(errno));
      }
      if (rc == 0) return std::nullopt;

      char chunk[4096];
      const ssize_t got = ::read(fd, chunk, sizeof chunk);
      if (got < 0) {
        if (errno == EINTR || errno == EAGAIN) continue;
        throw ChannelError(std::string("read failed: ") + std::strerror(errno));
      }
      if (got == 0) throw ChannelError("peer closed the connection");
      buffer_.append(chunk, static_cast<std::size_t>(got));
    }
  }

 private:
  std::optional<std::string> take_line() {
    const std::size_t nl = buffer_.find('\n');
    if (nl == std::string::npos) return std::nullopt;
    std::string line = buffer_.substr(0, nl);
    buffer_.erase(0, nl + 1);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  std::string buffer_;
};

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const ssize_t wrote = ::write(fd, data.data() + off, data.size() - off);
    if (wrote < 0) {
      if (errno == EINTR) continue;
      throw ChannelError(std::string("write failed: ") + std::strerror(errno));
    }
    off += static_cast<std::size_t>(wrote);
  }
}

std::vector<std::string> split_command(const std::string& command) {
  std::istringstream in(command);
  std::vector<std::string> args;
  std::string arg;
  while (in >> arg) args.push_back(arg);
  if (args.empty()) throw Error("external oracle command line is empty");
  return args;
}

class SubprocessChannel final : public LineChannel {
 public:
  explicit SubprocessChannel(std::string command) : command_(std::move(command)) {
    spawn();
  }

  ~SubprocessChannel() override { shutdown(); }

  void send_line(const std::string& line) override {
    write_all(stdin_fd_, line + "\n");
  }

  std::optional<std::string> recv_line(std::chrono::milliseconds timeout) override {
    return reader_.recv_line(stdout_fd_, timeout);
  }

  void restart() override {
    shutdown();
    reader_.reset();
    spawn();
  }

 private:
  void spawn() {
    const std::vector<std::string> args = split_command(command_);
    int to_child[2];
    int from_child[2];
    if (::pipe(to_child) != 0 || ::pipe(from_child) != 0)
      throw ChannelError("cannot create pipes for oracle subprocess");

    const pid_t pid = ::fork();
    if (pid < 0) throw ChannelError("cannot fork oracle subprocess");
    if (pid == 0) {
      ::dup2(to_child[0], STDIN_FILENO);
      ::dup2(from_child[1], STDOUT_FILENO);
      ::close(to_child[0]);
      ::close(to_child[1]);
      ::close(from_child[0]);
      ::close(from_child[1]);
      std::vector<char*> argv;
      for (const std::string& a : args) argv.push_back(const_cast<char*>(a.c_str()));
      argv.push_back(nullptr);
      ::execvp(argv[0], argv.data());
      ::_exit(127);
    }

    ::close(to_child[0]);
    ::close(from_child[1]);
    stdin_fd_ = to_child[1];
    stdout_fd_ = from_child[0];
    child_ = pid;
    ::signal(SIGPIPE, SIG_IGN);  // broken pipe surfaces as EPIPE, not a signal
  }

  void shutdown() {
    if (stdin_fd_ >= 0) ::close(stdin_fd_);
    if (stdout_fd_ >= 0) ::close(stdout_fd_);
    stdin_fd_ = stdout_fd_ = -1;
    if (child_ > 0) {
      int status = 0;
      if (::waitpid(child_, &status, WNOHANG) == 0) {
        ::kill(child_, SIGKILL);
        ::waitpid(child_, &status, 0);
      }
      child_ = -1;
    }
  }

  std::string command_;
  pid_t child_ = -1;
  int stdin_fd_ = -1;
  int stdout_fd_ = -1;
  FdLineReader reader_;
};

class TcpChannel final : public LineChannel {
 public:
  TcpChannel(std::string endpoint, std::chrono::milliseconds connect_timeout)
      : endpoint_(std::move(endpoint)), connect_timeout_(connect_timeout) {
    connect();
  }

  ~TcpChannel() override { disconnect(); }

  void send_line(const std::string& line) override { write_all(fd_, line + "\n"); }

  std::optional<std::string> recv_line(std::chrono::milliseconds timeout) override {
    return reader_.recv_line(fd_, timeout);
  }

  void restart() override {
    disconnect();
    reader_.reset();
    connect();
  }

 private:
  void connect() {
    const std::size_t colon = endpoint_.rfind(':');
    if (colon == std::string::npos)
      throw Error("tcp endpoint must be host:port, got \"" + endpoint_ + "\"");
    const std::string host = endpoint_.substr(0, colon);
    const std::string port = endpoint_.substr(colon + 1);

    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* info = nullptr;
    if (::getaddrinfo(host.c_str(), port.c_str(), &hints, &info) != 0 || !info)
      throw ChannelError("cannot resolve oracle endpoint " + endpoint_);

    int fd = -1;
    for (addrinfo* a = info; a; a = a->ai_next) {
      fd = ::socket(a->ai_family, a->ai_socktype | SOCK_NONBLOCK, a->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, a->ai_addr, a->ai_addrlen) == 0) break;
      if (errno == EINPROGRESS) {
        pollfd pfd{fd, POLLOUT, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(connect_timeout_.count()));
        int err = 0;
        socklen_t len = sizeof err;
        if (rc > 0 && ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len) == 0 && err == 0)
          break;
      }
      ::close(fd);
      fd = -1;
    }
    ::freeaddrinfo(info);
    if (fd < 0) throw ChannelError("cannot connect to oracle endpoint " + endpoint_);

    // back to blocking; reads are poll-gated anyway
    const int flags = ::fcntl(fd, F_GETFL, 0);
    ::fcntl(fd, F_SETFL, flags & ~O_NONBLOCK);
    ::signal(SIGPIPE, SIG_IGN);
    fd_ = fd;
  }

  void disconnect() {
    if (fd_ >= 0) ::close(fd_);
    fd_ = -1;
  }

  std::string endpoint_;
  std::chrono::milliseconds connect_timeout_;
  int fd_ = -1;
  FdLineReader reader_;
};

}  // namespace

void ExternalOracleConfig::validate() const {
  if (endpoint.empty())
    throw Error("external oracle endpoint is not set (flag, config, or "
                "SAVOIR_ORACLE_ENDPOINT)");
  if (request_timeout.count() <= 0) throw Error("request_timeout must be positive");
  if (max_retries < 0) throw Error("max_retries must be >= 0");
  if (max_in_flight < 1) throw Error("max_in_flight must be >= 1");
  if (!(score_min < score_max)) throw Error("score range must be non-degenerate");
}

std::unique_ptr<LineChannel> open_channel(const ExternalOracleConfig& config) {
  config.validate();
  if (config.transport == ExternalOracleConfig::Transport::kTcp)
    return std::make_unique<TcpChannel>(config.endpoint, config.request_timeout);
  return std::make_unique<SubprocessChannel>(config.endpoint);
}

struct ExternalValueOracle::Impl {
  ExternalOracleConfig config;
  std::unique_ptr<LineChannel> channel;
  UtilityWeights weights;
  int j_rollouts = 0;
  std::uint64_t base_seed = 0;
  std::uint64_t next_request_id = 1;
};

ExternalValueOracle::ExternalValueOracle(const ExternalOracleConfig& config,
                                         Episode episode, UtilityWeights weights,
                                         int j_rollouts, std::uint64_t base_seed)
    : ExternalValueOracle(open_channel(config), config, std::move(episode),
                          std::move(weights), j_rollouts, base_seed) {}

ExternalValueOracle::ExternalValueOracle(std::unique_ptr<LineChannel> channel,
                                         ExternalOracleConfig config, Episode episode,
                                         UtilityWeights weights, int j_rollouts,
                                         std::uint64_t base_seed)
    : impl_(std::make_unique<Impl>()), episode_(std::move(episode)) {
  if (j_rollouts < 1) throw Error("rollout count J must be >= 1");
  weights.validate();
  episode_.validate();
  impl_->config = std::move(config);
  impl_->channel = std::move(channel);
  impl_->weights = std::move(weights);
  impl_->j_rollouts = j_rollouts;
  impl_->base_seed = base_seed;
}

ExternalValueOracle::~ExternalValueOracle() = default;

ValueSample ExternalValueOracle::evaluate(Coalition coalition) {
  const std::uint64_t mask = coalition.mask();
  auto& impl = *impl_;
  const int j_total = impl.j_rollouts;

  const std::vector<Turn> history = reconstruct_history(episode_, coalition);
  nlohmann::ordered_json history_json = nlohmann::ordered_json::array();
  for (const Turn& t : history)
    history_json.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});

  struct Pending {
    int rollout = 0;
    Clock::time_point deadline;
  };

  std::deque<int> send_queue;
  for (int j = 0; j < j_total; ++j) send_queue.push_back(j);
  std::map<std::uint64_t, Pending> pending;
  std::vector<int> attempts(j_total, 0);
  std::vector<std::optional<double>> utilities(j_total);
  int completed = 0;
  int restarts_used = 0;

  auto send_request = [&](int j) {
    nlohmann::ordered_json request;
    request["request_id"] = impl.next_request_id;
    request["episode_id"] = episode_.episode_id;
    request["coalition_mask"] = mask;
    request["rollout_index"] = static_cast<std::uint32_t>(j);
    request["rollout_seed"] =
        stable_hash(impl.base_seed, episode_.episode_id, mask, static_cast<std::uint64_t>(j));
    request["history"] = history_json;
    request["agent_goal"] = episode_.agent_goal;
    request["partner_goal"] = episode_.partner_goal;
    impl.channel->send_line(request.dump());
    pending.emplace(impl.next_request_id,
                    Pending{j, Clock::now() + impl.config.request_timeout});
    ++impl.next_request_id;
  };

  auto retry_or_fail = [&](int j, OracleError::Kind kind, const std::string& why) {
    if (attempts[j] >= impl.config.max_retries)
      throw OracleError(kind, mask, why + " (rollout " + std::to_string(j) + ", " +
                                        std::to_string(attempts[j]) + " retries used)");
    ++attempts[j];
    send_queue.push_back(j);
  };

  auto handle_channel_loss = [&](const std::string& why) {
    if (restarts_used >= impl.config.max_retries)
      throw OracleError(OracleError::Kind::kConnection, mask, why);
    ++restarts_used;
    try {
      impl.channel->restart();
    } catch (const ChannelError& e) {
      throw OracleError(OracleError::Kind::kConnection, mask, e.what());
    }
    for (const auto& [id, p] : pending) send_queue.push_back(p.rollout);
    pending.clear();
  };

  while (completed < j_total) {
    while (!send_queue.empty() &&
           pending.size() < static_cast<std::size_t>(impl.config.max_in_flight)) {
      const int j = send_queue.front();
      send_queue.pop_front();
      try {
        send_request(j);
      } catch (const ChannelError& e) {
        send_queue.push_front(j);
        handle_channel_loss(e.what());
      }
    }

    auto earliest = Clock::time_point::max();
    for (const auto& [id, p] : pending) earliest = std::min(earliest, p.deadline);
    auto wait = std::chrono::duration_cast<std::chrono::milliseconds>(earliest - Clock::now());
    if (wait.count() < 1) wait = std::chrono::milliseconds(1);

    std::optional<std::string> line;
    try {
      line = impl.channel->recv_line(wait);
    } catch (const ChannelError& e) {
      handle_channel_loss(e.what());
      continue;
    }

    if (!line) {
      // poll tick: expire requests past their deadline
      const auto now = Clock::now();
      for (auto it = pending.begin(); it != pending.end();) {
        if (it->second.deadline <= now) {
          const int j = it->second.rollout;
          it = pending.erase(it);  // a late reply to this id will be discarded
          retry_or_fail(j, OracleError::Kind::kTimeout,
                        "oracle response timed out after " +
                            std::to_string(impl.config.request_timeout.count()) + " ms");
        } else {
          ++it;
        }
      }
      continue;
    }

    nlohmann::json response = nlohmann::json::parse(*line, nullptr, false);
    if (response.is_discarded() || !response.contains("request_id") ||
        !response["request_id"].is_number_unsigned())
      throw OracleError(OracleError::Kind::kMalformed, mask,
                        "unparsable oracle response line");
    const std::uint64_t id = response["request_id"].get<std::uint64_t>();
    const auto it = pending.find(id);
    if (it == pending.end()) continue;  // stale or duplicate reply; ignore
    const int j = it->second.rollout;
    pending.erase(it);

    if (response.contains("error")) {
      retry_or_fail(j, OracleError::Kind::kRemote,
                    "oracle reported error: " + response["error"].dump());
      continue;
    }
    if (!response.contains("dimension_scores") || !response["dimension_scores"].is_object())
      throw OracleError(OracleError::Kind::kMalformed, mask,
                        "oracle response lacks dimension_scores");

    DimensionScores scores;
    for (const auto& [key, value] : response["dimension_scores"].items()) {
      if (!value.is_number())
        throw OracleError(OracleError::Kind::kMalformed, mask,
                          "non-numeric score for dimension \"" + key + "\"");
      const double g = value.get<double>();
      if (!std::isfinite(g) || g < impl.config.score_min || g > impl.config.score_max)
        throw OracleError(OracleError::Kind::kMalformed, mask,
                          "score " + std::to_string(g) + " for dimension \"" + key +
                              "\" is outside [" + std::to_string(impl.config.score_min) +
                              ", " + std::to_string(impl.config.score_max) + "]");
      scores.values[key] = g;
    }
    if (scores.values.size() != impl.weights.weights.size())
      throw OracleError(OracleError::Kind::kMalformed, mask,
                        "oracle returned wrong dimension key set");
    try {
      utilities[j] = aggregate_utility(scores, impl.weights);
    } catch (const Error& e) {
      throw OracleError(OracleError::Kind::kMalformed, mask, e.what());
    }
    ++completed;
  }

  double total = 0.0;
  for (const auto& u : utilities) total += *u;
  return ValueSample{coalition, total / j_total, j_total};
}

std::shared_ptr<ValueOracle> external_value_oracle(const ExternalOracleConfig& config,
                                                   const Episode& episode,
                                                   const UtilityWeights& weights,
                                                   int j_rollouts,
                                                   std::uint64_t base_seed) {
  return std::make_shared<ExternalValueOracle>(config, episode, weights, j_rollouts,
                                               base_seed);
}

}  // namespace savoir
