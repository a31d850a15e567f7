#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "harmon/numerics/param_store.hpp"

namespace harmon::num {

// AdamW state. group_lr overrides lr per parameter group, which is how the
// decoder-vs-rest learning-rate split is expressed.
template <typename T>
struct OptimizerState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::map<std::string, Slot> slots;  // by param name, created on first step
  std::int64_t step = 0;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.95;
  double eps = 1e-8;
  double weight_decay = 0.0;
  std::map<std::string, double> group_lr;

  double lr_for_group(const std::string& group) const {
    auto it = group_lr.find(group);
    return it == group_lr.end() ? lr : it->second;
  }
};

// One decoupled-weight-decay Adam update over trainable params; frozen params are
// untouched, including their decay. Throws OptimError when a trainable param has
// no materialized gradient buffer.
template <typename T>
void adamw_step(ParamStore<T>& store, OptimizerState<T>& state);

}  // namespace harmon::num
