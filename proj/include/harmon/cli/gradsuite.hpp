#pragma once

#include <iosfwd>
#include <string>

namespace harmon::cli {

// Finite-difference audit of the whole differentiable surface: every op
// against central differences in 64-bit (tolerance 1e-5), then the three task
// losses end-to-end on a small model (tolerance 1e-3; composites carry
// cancellation error an order below that).
struct GradSuiteReport {
  int seeds = 0;
  int op_cases = 0;
  int e2e_cases = 0;
  double max_op_err = 0.0;
  double max_e2e_err = 0.0;
  std::string worst_op;
  bool passed = false;
};

GradSuiteReport run_grad_suite(int seeds = 20, std::ostream* log = nullptr);

}  // namespace harmon::cli
