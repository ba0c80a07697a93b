#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <string_view>

namespace ota {

// Seeded random stream. Named substreams are derived from the seed alone, not
// from the engine position, so consuming numbers in one stage never shifts the
// numbers another stage sees.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  Rng substream(std::string_view name) const;
  Rng substream(std::string_view name, std::uint64_t index) const;

  std::uint64_t seed() const noexcept { return seed_; }
  std::mt19937_64& engine() noexcept { return engine_; }

  double normal(double mean = 0.0, double stddev = 1.0);
  double uniform(double lo = 0.0, double hi = 1.0);
  bool bernoulli(double p);
  std::size_t index(std::size_t n);
  std::uint64_t next_u64();

  // Engine state as text, restorable with set_state().
  std::string state() const;
  void set_state(const std::string& state);

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

std::uint64_t mix_seed(std::uint64_t seed, std::string_view name, std::uint64_t index = 0);

}  // namespace ota
