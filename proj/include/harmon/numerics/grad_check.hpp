#pragma once

#include <functional>
#include <string>
#include <vector>

#include "harmon/numerics/param_store.hpp"

namespace harmon::num {

struct GradCheckOptions {
  double eps = 1e-5;            // central-difference step; must lie in [1e-6, 1e-3]
  int samples_per_param = 8;    // elements probed per parameter (all if fewer)
  std::uint64_t seed = 1234;    // drives element sampling
  // Relative-error denominator floor. The finite-difference estimate carries
  // absolute noise ~ ulp(loss)/eps, so checks on large-valued composite losses
  // must raise the floor above that noise or near-zero gradients read as
  // spurious errors.
  double denom_floor = 1e-8;
  // Extrapolate two central differences (h and h/2) to cancel the h^2 term.
  // Deep composites are curvature-limited at any single workable h; this buys
  // O(h^4) accuracy for twice the evaluations.
  bool richardson = false;
};

struct GradCheckReport {
  struct Entry {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
  };
  std::vector<Entry> per_param;
  double max_rel_err = 0.0;

  const Entry* worst() const;
};

// Compares analytic gradients of fn (a scalar-valued closure over store's params)
// against central finite differences. fn must be deterministic; it is re-evaluated
// ~2*samples_per_param times per parameter. Relative error uses
// |a - n| / max(|a|, |n|, 1e-8).
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& fn, ParamStore<T>& store,
                           const GradCheckOptions& opt = {});

}  // namespace harmon::num
