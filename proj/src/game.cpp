#include "savoir/game.hpp"

#include <cmath>

namespace savoir {

ValueSample ValueCache::evaluate(ValueOracle& oracle, Coalition coalition) {
  const std::uint64_t mask = coalition.mask();

  std::unique_lock lock(mu_);
  if (auto it = entries_.find(mask); it != entries_.end()) return it->second;
  if (auto it = inflight_.find(mask); it != inflight_.end()) {
    auto fut = it->second;
    lock.unlock();
    return fut.get();  // rethrows the winner's failure, cache stays clean
  }

  std::promise<ValueSample> promise;
  inflight_.emplace(mask, promise.get_future().share());
  lock.unlock();

  try {
    ValueSample sample = oracle.evaluate(coalition);
    lock.lock();
    entries_.emplace(mask, sample);
    inflight_.erase(mask);
    lock.unlock();
    promise.set_value(sample);
    return sample;
  } catch (...) {
    lock.lock();
    inflight_.erase(mask);
    lock.unlock();
    promise.set_exception(std::current_exception());
    throw;
  }
}

std::optional<ValueSample> ValueCache::lookup(std::uint64_t mask) const {
  std::lock_guard lock(mu_);
  if (auto it = entries_.find(mask); it != entries_.end()) return it->second;
  return std::nullopt;
}

std::size_t ValueCache::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

double evaluate_cached(ValueOracle& oracle, Coalition coalition, ValueCache& cache) {
  const ValueSample sample = cache.evaluate(oracle, coalition);
  if (!std::isfinite(sample.value))
    throw OracleError(OracleError::Kind::kMalformed, coalition.mask(),
                      "oracle produced a non-finite value");
  return sample.value;
}

std::vector<Coalition> all_coalitions(int n) {
  if (n < 1) throw Error("player count must be positive");
  if (n > kMaxEnumerationPlayers)
    throw BudgetError("full enumeration limited to n <= " +
                      std::to_string(kMaxEnumerationPlayers) + ", got n = " +
                      std::to_string(n));
  std::vector<Coalition> out;
  out.reserve(std::size_t{1} << n);
  for (std::uint64_t mask = 0; mask < (std::uint64_t{1} << n); ++mask)
    out.push_back(Coalition::from_mask(mask));
  return out;
}

}  // namespace savoir
