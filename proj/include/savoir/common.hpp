#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace savoir {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A request would exceed an enumeration or evaluation budget (e.g. asking
// for all 2^n coalitions of a game that is too large).
class BudgetError : public Error {
 public:
  using Error::Error;
};

// The regression system has fewer independent rows than unknowns even after
// the ridge fallback. Callers should enlarge the sampling plan.
class RankDeficiencyError : public Error {
 public:
  using Error::Error;
};

class ParseError : public Error {
 public:
  using Error::Error;
};

// Failure of a value oracle while evaluating one coalition. Carries the
// offending coalition mask so a batch run can resume on exactly the masks
// that never produced a value.
class OracleError : public Error {
 public:
  enum class Kind { kConnection, kTimeout, kMalformed, kRemote };

  OracleError(Kind kind, std::uint64_t coalition_mask, const std::string& what)
      : Error(what), kind_(kind), coalition_mask_(coalition_mask) {}

  Kind kind() const { return kind_; }
  std::uint64_t coalition_mask() const { return coalition_mask_; }

 private:
  Kind kind_;
  std::uint64_t coalition_mask_;
};

// 64-bit FNV-1a over a byte stream. Every derived seed in the project is a
// StableHash of structured inputs (base seed, episode id, coalition mask,
// rollout index), so distributed or reordered evaluation cannot change
// results and another implementation can reproduce them from this comment:
// h = 0xcbf29ce484222325; per byte: h = (h ^ byte) * 0x100000001b3.
// Integers contribute 8 little-endian bytes; strings contribute their raw
// bytes followed by their length as an integer.
class StableHash {
 public:
  StableHash& mix(std::uint64_t word) {
    for (int i = 0; i < 8; ++i) byte(static_cast<unsigned char>(word >> (8 * i)));
    return *this;
  }

  StableHash& mix(std::string_view s) {
    for (char c : s) byte(static_cast<unsigned char>(c));
    return mix(static_cast<std::uint64_t>(s.size()));
  }

  std::uint64_t digest() const { return h_; }

 private:
  void byte(unsigned char b) { h_ = (h_ ^ b) * 0x100000001b3ull; }

  std::uint64_t h_ = 0xcbf29ce484222325ull;
};

template <typename... Parts>
std::uint64_t stable_hash(const Parts&... parts) {
  StableHash h;
  (h.mix(parts), ...);
  return h.digest();
}

// Seeded random stream used by all samplers. The generator is std::mt19937_64
// (bit-exact across standard libraries); the derived draws below are pinned
// here instead of using std:: distributions, whose output is
// implementation-defined:
//   below(b)    rejection sampling on raw 64-bit words
//   uniform01() top 53 bits scaled by 2^-53, in [0, 1)
//   gaussian()  Box-Muller: sqrt(-2 ln(1-u1)) * cos(2 pi u2)
//   shuffle     Fisher-Yates from the back, unbiased
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next_u64() { return gen_(); }

  std::uint64_t below(std::uint64_t bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    for (;;) {
      const std::uint64_t r = next_u64();
      if (r >= threshold) return r % bound;
    }
  }

  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  double gaussian() {
    const double u1 = 1.0 - uniform01();  // (0, 1], keeps the log finite
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) std::swap(v[i - 1], v[below(i)]);
  }

 private:
  std::mt19937_64 gen_;
};

}  // namespace savoir
