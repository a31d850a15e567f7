#include "harmon/pipelines/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "harmon/common.hpp"

namespace harmon::pipe {

GenSchedule schedule_counts(int hw, int K) {
  if (K < 1 || K > hw) throw ScheduleError("schedule_counts: K must lie in [1, hw]");
  GenSchedule s;
  s.hw = hw;
  s.K = K;
  s.m.resize(K + 1);
  s.m[0] = hw;
  for (int k = 1; k < K; ++k)
    s.m[k] = static_cast<int>(std::floor(hw * std::cos(k * M_PI / (2.0 * K))));
  s.m[K] = 0;

  s.n.resize(K);
  for (int k = 0; k < K; ++k) s.n[k] = s.m[k] - s.m[k + 1];

  // Absorb empty steps: pull one unit from the largest later step.
  for (int k = 0; k < K; ++k) {
    while (s.n[k] == 0) {
      int big = -1;
      for (int j = k + 1; j < K; ++j)
        if (big < 0 || s.n[j] > s.n[big]) big = j;
      if (big < 0 || s.n[big] <= 0)
        throw ScheduleError("schedule_counts: cannot make every step non-empty");
      --s.n[big];
      ++s.n[k];
    }
  }
  // Re-derive m so the pair stays consistent after absorption.
  for (int k = 0; k < K; ++k) s.m[k + 1] = s.m[k] - s.n[k];
  return s;
}

}  // namespace harmon::pipe
