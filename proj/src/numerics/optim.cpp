#include "harmon/numerics/optim.hpp"

#include <cmath>

#include "harmon/common.hpp"

namespace harmon::num {

template <typename T>
void adamw_step(ParamStore<T>& store, OptimizerState<T>& state) {
  if (state.lr < 0) throw OptimError("adamw_step: negative learning rate");
  for (const auto& [g, lr] : state.group_lr)
    if (lr < 0) throw OptimError("adamw_step: negative learning rate for group '" + g + "'");
  state.step += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (const auto& name : store.names()) {
    auto& p = store.at(name);
    if (!p.trainable) continue;
    if (p.grad.empty())
      throw OptimError("adamw_step: trainable param '" + name + "' has no gradient");
    auto& slot = state.slots[name];
    if (slot.m.empty()) {
      slot.m.assign(p.value.size(), T(0));
      slot.v.assign(p.value.size(), T(0));
    }
    const double lr = state.lr_for_group(p.group);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = static_cast<double>(p.grad[i]);
      const double m = b1 * static_cast<double>(slot.m[i]) + (1.0 - b1) * g;
      const double v = b2 * static_cast<double>(slot.v[i]) + (1.0 - b2) * g * g;
      slot.m[i] = static_cast<T>(m);
      slot.v[i] = static_cast<T>(v);
      const double mhat = m / bc1;
      const double vhat = v / bc2;
      double x = static_cast<double>(p.value[i]);
      x -= lr * (mhat / (std::sqrt(vhat) + state.eps) + state.weight_decay * x);
      p.value[i] = static_cast<T>(x);
    }
  }
}

template void adamw_step<float>(ParamStore<float>&, OptimizerState<float>&);
template void adamw_step<double>(ParamStore<double>&, OptimizerState<double>&);

}  // namespace harmon::num
