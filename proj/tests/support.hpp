#pragma once

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "savoir/game.hpp"

namespace test_support {

struct CommandResult {
  int exit_code = -1;
  std::string output;  // stdout + stderr
};

inline CommandResult run_command(const std::string& command) {
  CommandResult result;
  FILE* pipe = popen((command + " 2>&1").c_str(), "r");
  if (!pipe) return result;
  char buf[4096];
  while (std::size_t got = std::fread(buf, 1, sizeof buf, pipe))
    result.output.append(buf, got);
  const int status = pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline std::filesystem::path fresh_dir(const std::string& tag) {
  const auto dir =
      std::filesystem::temp_directory_path() / ("savoir-test-" + tag);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Counts oracle invocations; wraps any closed form.
class CountingOracle final : public savoir::ValueOracle {
 public:
  CountingOracle(int n, std::function<double(savoir::Coalition)> fn)
      : n_(n), fn_(std::move(fn)) {}

  int num_players() const override { return n_; }

  savoir::ValueSample evaluate(savoir::Coalition c) override {
    ++calls_;
    return savoir::ValueSample{c, fn_(c), 0};
  }

  bool concurrent_safe() const override { return true; }

  int calls() const { return calls_.load(); }

 private:
  int n_;
  std::function<double(savoir::Coalition)> fn_;
  std::atomic<int> calls_{0};
};

}  // namespace test_support
