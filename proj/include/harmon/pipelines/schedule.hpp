#pragma once

#include <vector>

namespace harmon::pipe {

// The K-step reveal plan for masked-autoregressive generation. m[k] is the
// masked count entering step k+1 (m[0] = hw, m[K] = 0, non-increasing);
// n[k] = m[k] - m[k+1] >= 1 patches are revealed at step k+1 and the n sum to
// hw.
struct GenSchedule {
  int hw = 0;
  int K = 0;
  std::vector<int> m;     // K+1 entries
  std::vector<int> n;     // K entries
  std::vector<int> perm;  // reveal order; empty until a generation draws one
};

// Cosine mask curve m_k = floor(hw cos(k pi / 2K)) with the endpoints forced;
// a zero reveal count absorbs one unit from the largest later step so every
// step reveals at least one patch. ScheduleError unless 1 <= K <= hw.
GenSchedule schedule_counts(int hw, int K);

}  // namespace harmon::pipe
