#pragma once

#include <cstdint>
#include <vector>

namespace harmon::num {

// Counter-based generator: the stream is a pure function of (key, counter), so
// state is two u64s, streams can be split without sharing state, and the same
// seed gives the same draws on any platform.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  // Independent stream derived from this one's key; counter starts at zero.
  // Splitting does not advance or disturb the parent.
  Rng split(std::uint64_t stream) const;

  std::uint64_t next_u64();
  // Uniform in [0, 1).
  double next_uniform();
  // Uniform integer in [lo, hi] inclusive.
  std::int64_t next_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller; one draw consumes two uniforms, no spare is cached.
  double next_normal();

  template <typename T>
  void fill_normal(std::vector<T>& out, double mean, double stddev) {
    for (auto& x : out) x = static_cast<T>(mean + stddev * next_normal());
  }
  template <typename T>
  void fill_uniform(std::vector<T>& out, double lo, double hi) {
    for (auto& x : out) x = static_cast<T>(lo + (hi - lo) * next_uniform());
  }

  // In-place Fisher-Yates.
  void shuffle(std::vector<int>& v);

  std::uint64_t key() const { return key_; }
  std::uint64_t counter() const { return counter_; }
  static Rng restore(std::uint64_t key, std::uint64_t counter);

 private:
  Rng() = default;
  std::uint64_t key_ = 0;
  std::uint64_t counter_ = 0;
};

}  // namespace harmon::num
