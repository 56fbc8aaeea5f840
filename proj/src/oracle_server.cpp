#include "savoir/oracle_server.hpp"

#include <netinet/in.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>
#include <iostream>
#include <thread>

#include <nlohmann/json.hpp>

namespace savoir {

SimOracleServer::SimOracleServer(OracleServerOptions options)
    : options_(std::move(options)) {
  if (options_.n < 1 || options_.n > kMaxPlayers)
    throw Error("oracle server needs the game size n in [1, 63]");
  options_.weights.validate();
}

std::vector<std::string> SimOracleServer::handle_line(const std::string& line) {
  const int index = requests_seen_++;

  if (index < options_.drop_first) return {};
  if (index == 0 && options_.delay_first.count() > 0)
    std::this_thread::sleep_for(options_.delay_first);

  std::string response = respond(line);

  std::vector<std::string> out;
  if (options_.stale_noise) {
    // A response no live request asked for: plausible shape, unknown id,
    // in-range scores. A client matching by arrival order would absorb it.
    nlohmann::ordered_json stale;
    stale["request_id"] = 0xdeadbeefull + static_cast<std::uint64_t>(index);
    nlohmann::ordered_json scores;
    for (const auto& [key, w] : options_.weights.weights) scores[key] = 9.9;
    stale["dimension_scores"] = scores;
    out.push_back(stale.dump());
  }

  if (options_.shuffle_pairs) {
    if (held_.empty()) {
      held_.push_back(std::move(response));
      return out;
    }
    out.push_back(std::move(response));  // later request answered first
    out.push_back(std::move(held_.back()));
    held_.clear();
    return out;
  }
  out.push_back(std::move(response));
  return out;
}

std::vector<std::string> SimOracleServer::flush() {
  std::vector<std::string> out = std::move(held_);
  held_.clear();
  return out;
}

std::string SimOracleServer::respond(const std::string& line) {
  if (options_.malformed) return "this is not json {";

  nlohmann::json request = nlohmann::json::parse(line, nullptr, false);
  if (request.is_discarded() || !request.contains("request_id"))
    return R"({"request_id": 0, "error": "unparsable request"})";
  const std::uint64_t id = request["request_id"].get<std::uint64_t>();

  auto error_response = [id](const std::string& message) {
    nlohmann::ordered_json j;
    j["request_id"] = id;
    j["error"] = message;
    return j.dump();
  };

  if (requests_seen_ <= options_.fail_first) return error_response("transient failure");

  try {
    const std::string episode_id = request.at("episode_id").get<std::string>();
    const std::uint64_t rollout_seed = request.at("rollout_seed").get<std::uint64_t>();
    std::vector<std::string> texts;
    for (const auto& turn : request.at("history"))
      texts.push_back(turn.at("text").get<std::string>());

    const SimGameSpec spec =
        sim_spec_for_episode(episode_id, options_.game_seed, options_.n, options_.game);
    double total;
    if (options_.constant_total) {
      total = *options_.constant_total;
    } else {
      const Coalition realized = sim_tagged_coalition(texts, options_.n);
      total = sim_expected_value(spec, realized);
      if (spec.noise_std > 0.0)
        total += spec.noise_std *
                 Rng(stable_hash(rollout_seed, std::string_view("sim-noise"))).gaussian();
    }

    nlohmann::ordered_json scores;
    auto split_it = spec.dimension_split.weights.begin();
    for (const auto& [key, w] : options_.weights.weights) {
      scores[key] = options_.out_of_range ? 11.0 : total * split_it->second / w;
      ++split_it;
    }

    nlohmann::ordered_json j;
    j["request_id"] = id;
    j["dimension_scores"] = scores;
    return j.dump();
  } catch (const std::exception& e) {
    return error_response(std::string("bad request: ") + e.what());
  }
}

void serve_stdio(SimOracleServer& server) {
  std::string line;
  while (std::getline(std::cin, line)) {
    for (const std::string& response : server.handle_line(line))
      std::cout << response << '\n' << std::flush;
  }
  for (const std::string& response : server.flush())
    std::cout << response << '\n' << std::flush;
}

TcpOracleListener::TcpOracleListener(int port) {
  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0) throw Error("cannot create listening socket");
  const int one = 1;
  ::setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof addr) != 0)
    throw Error("cannot bind oracle server port " + std::to_string(port));
  if (::listen(listen_fd_, 1) != 0) throw Error("cannot listen on oracle server port");

  socklen_t len = sizeof addr;
  ::getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpOracleListener::~TcpOracleListener() { shutdown(); }

void TcpOracleListener::shutdown() {
  if (listen_fd_ >= 0) {
    ::shutdown(listen_fd_, SHUT_RDWR);
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

void TcpOracleListener::serve(SimOracleServer& server, bool accept_loop) {
  do {
    const int client = ::accept(listen_fd_, nullptr, nullptr);
    if (client < 0) return;  // listener shut down

    std::string buffer;
    char chunk[4096];
    for (;;) {
      const ssize_t got = ::read(client, chunk, sizeof chunk);
      if (got <= 0) break;
      buffer.append(chunk, static_cast<std::size_t>(got));
      std::size_t nl;
      while ((nl = buffer.find('\n')) != std::string::npos) {
        const std::string line = buffer.substr(0, nl);
        buffer.erase(0, nl + 1);
        bool write_failed = false;
        for (const std::string& response : server.handle_line(line)) {
          const std::string out = response + "\n";
          if (::write(client, out.data(), out.size()) < 0) write_failed = true;
        }
        if (write_failed) break;
      }
    }
    ::close(client);
  } while (accept_loop);
}

}  // namespace savoir
