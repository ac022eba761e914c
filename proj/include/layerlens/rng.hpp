#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace layerlens {

// Abstract draw source. Generation code pulls numbers through this interface
// so tests can inject scripted sequences (e.g. to force distractor
// collisions and watch the resample path).
class rand_source {
public:
  virtual ~rand_source() = default;
  virtual std::uint64_t next_u64() = 0;

  // Uniform real in [lo, hi). 53-bit mantissa mapping, no library
  // distributions so sequences are identical across standard libraries.
  double uniform(double lo, double hi);

  // Uniform integer in [lo, hi], both ends inclusive.
  std::int64_t randint(std::int64_t lo, std::int64_t hi);

  // Standard normal via Box-Muller. Two raw draws per value, no cached
  // spare, so the consumed stream length is predictable.
  double gaussian();
};

class mt19937_source final : public rand_source {
public:
  explicit mt19937_source(std::uint64_t seed) : engine_(seed) {}
  std::uint64_t next_u64() override { return engine_(); }

private:
  std::mt19937_64 engine_;
};

std::uint64_t splitmix64(std::uint64_t x);

// FNV-1a, used for content hashes in manifests and seeds derived from ids.
std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t fnv1a64_accumulate(std::uint64_t state, std::string_view bytes);

std::string hash_to_hex(std::uint64_t h);

} // namespace layerlens
