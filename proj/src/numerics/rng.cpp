#include "harmon/numerics/rng.hpp"

#include <cmath>

namespace harmon::num {

namespace {

// splitmix64 finalizer; full avalanche on 64 bits.
std::uint64_t mix(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t kGolden = 0x9E3779B97F4A7C15ULL;

}  // namespace

Rng::Rng(std::uint64_t seed) : key_(mix(seed)), counter_(0) {}

Rng Rng::split(std::uint64_t stream) const {
  Rng child;
  child.key_ = mix(key_ ^ (stream * 0xD1B54A32D192ED03ULL));
  child.counter_ = 0;
  return child;
}

Rng Rng::restore(std::uint64_t key, std::uint64_t counter) {
  Rng r;
  r.key_ = key;
  r.counter_ = counter;
  return r;
}

std::uint64_t Rng::next_u64() { return mix(key_ ^ (counter_++ * kGolden)); }

double Rng::next_uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::int64_t Rng::next_int(std::int64_t lo, std::int64_t hi) {
  auto span = static_cast<std::uint64_t>(hi - lo + 1);
  return lo + static_cast<std::int64_t>(next_u64() % span);
}

double Rng::next_normal() {
  double u1 = 1.0 - next_uniform();  // (0, 1], keeps the log finite
  double u2 = next_uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

void Rng::shuffle(std::vector<int>& v) {
  for (std::size_t i = v.size(); i > 1; --i) {
    auto j = static_cast<std::size_t>(next_int(0, static_cast<std::int64_t>(i) - 1));
    std::swap(v[i - 1], v[j]);
  }
}

}  // namespace harmon::num
