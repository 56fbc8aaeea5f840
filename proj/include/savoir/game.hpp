#pragma once

#include <bit>
#include <cstdint>
#include <functional>
#include <future>
#include <mutex>
#include <optional>
#include <unordered_map>
#include <vector>

#include "savoir/common.hpp"

namespace savoir {

inline constexpr int kMaxPlayers = 63;             // coalition fits one machine word
inline constexpr int kMaxEnumerationPlayers = 20;  // guard for 2^n enumeration

// A subset of the player indices 0..n-1, packed as a bitmask with a cached
// population count. Immutable value type.
class Coalition {
 public:
  constexpr Coalition() = default;

  static Coalition from_mask(std::uint64_t mask) {
    return Coalition(mask, std::popcount(mask));
  }

  static Coalition empty_set() { return {}; }

  static Coalition grand(int n) {
    check_index(n - 1);
    return Coalition(n == 64 ? ~0ull : (1ull << n) - 1, n);
  }

  static Coalition singleton(int i) {
    check_index(i);
    return Coalition(1ull << i, 1);
  }

  constexpr std::uint64_t mask() const { return mask_; }
  constexpr int size() const { return size_; }
  constexpr bool empty() const { return mask_ == 0; }

  constexpr bool contains(int i) const { return (mask_ >> i) & 1ull; }

  Coalition with(int i) const {
    check_index(i);
    return contains(i) ? *this : Coalition(mask_ | (1ull << i), size_ + 1);
  }

  Coalition without(int i) const {
    check_index(i);
    return contains(i) ? Coalition(mask_ & ~(1ull << i), size_ - 1) : *this;
  }

  constexpr bool is_subset_of(Coalition o) const { return (mask_ & ~o.mask_) == 0; }

  friend constexpr bool operator==(Coalition, Coalition) = default;

 private:
  constexpr Coalition(std::uint64_t mask, int size) : mask_(mask), size_(size) {}

  static void check_index(int i) {
    if (i < 0 || i >= 64) throw Error("player index out of range: " + std::to_string(i));
  }

  std::uint64_t mask_ = 0;
  int size_ = 0;
};

// The set of players of one game: the target agent's n actions.
class PlayerSet {
 public:
  explicit PlayerSet(int n) : n_(n) {
    if (n < 1 || n > kMaxPlayers)
      throw Error("player count must be in [1, " + std::to_string(kMaxPlayers) +
                  "], got " + std::to_string(n));
  }

  int n() const { return n_; }
  Coalition grand() const { return Coalition::grand(n_); }
  bool admits(Coalition c) const { return n_ == kMaxPlayers || (c.mask() >> n_) == 0; }

 private:
  int n_;
};

// One realized coalition value.
struct ValueSample {
  Coalition coalition;
  double value = 0.0;
  int num_rollouts_used = 0;
};

// Characteristic function contract: maps a coalition to a scalar strategic
// value, possibly via stochastic rollouts. Implementations must be
// deterministic given their construction-time seed so that cached values are
// reproducible.
class ValueOracle {
 public:
  virtual ~ValueOracle() = default;

  virtual int num_players() const = 0;
  virtual ValueSample evaluate(Coalition coalition) = 0;

  // True when evaluate() may be called from several threads at once.
  virtual bool concurrent_safe() const { return false; }
};

// Adapts a plain closed-form function to the oracle contract.
class FunctionOracle final : public ValueOracle {
 public:
  FunctionOracle(int n, std::function<double(Coalition)> fn)
      : players_(n), fn_(std::move(fn)) {}

  int num_players() const override { return players_.n(); }

  ValueSample evaluate(Coalition coalition) override {
    if (!players_.admits(coalition)) throw Error("coalition outside player set");
    return ValueSample{coalition, fn_(coalition), 0};
  }

  bool concurrent_safe() const override { return true; }

 private:
  PlayerSet players_;
  std::function<double(Coalition)> fn_;
};

// Memoizing evaluation cache shared by all solvers. The first realized value
// for a mask is stored permanently and returned for every later query; the
// oracle is never asked twice for the same mask. Concurrent evaluations of
// the same uncached mask are collapsed into a single oracle call whose result
// (or failure) all callers observe. A failed call leaves no entry behind.
class ValueCache {
 public:
  ValueSample evaluate(ValueOracle& oracle, Coalition coalition);

  std::optional<ValueSample> lookup(std::uint64_t mask) const;
  std::size_t size() const;

 private:
  mutable std::mutex mu_;
  std::unordered_map<std::uint64_t, ValueSample> entries_;
  std::unordered_map<std::uint64_t, std::shared_future<ValueSample>> inflight_;
};

// Cached coalition value as a plain scalar. Enforces the finiteness
// invariant at the oracle boundary.
double evaluate_cached(ValueOracle& oracle, Coalition coalition, ValueCache& cache);

// Every coalition over n players in ascending mask order (2^n of them).
// Rejects n > kMaxEnumerationPlayers.
std::vector<Coalition> all_coalitions(int n);

}  // namespace savoir
