#include "harmon/numerics/param_store.hpp"

#include <cmath>

namespace harmon::num {

namespace {
// Stable 64-bit name hash (FNV-1a) for order-independent init substreams.
std::uint64_t name_hash(const std::string& s) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001B3ULL;
  }
  return h;
}
}  // namespace

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::add(const std::string& name, const Shape& shape,
                                                  const std::string& group, bool trainable) {
  if (index_.count(name)) throw Error("param '" + name + "' already registered");
  Param p;
  p.name = name;
  p.group = group;
  p.shape = shape;
  p.value.assign(static_cast<std::size_t>(shape_numel(shape)), T(0));
  p.trainable = trainable;
  params_.push_back(std::move(p));
  index_[name] = params_.size() - 1;
  order_.push_back(name);
  return params_.back();
}

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::add_normal(const std::string& name,
                                                         const Shape& shape,
                                                         const std::string& group,
                                                         const Rng& init_rng, double stddev) {
  Param& p = add(name, shape, group);
  Rng sub = init_rng.split(name_hash(name));
  sub.fill_normal(p.value, 0.0, stddev);
  return p;
}

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::add_const(const std::string& name, const Shape& shape,
                                                        const std::string& group, T fill) {
  Param& p = add(name, shape, group);
  std::fill(p.value.begin(), p.value.end(), fill);
  return p;
}

template <typename T>
bool ParamStore<T>::has(const std::string& name) const {
  return index_.count(name) != 0;
}

template <typename T>
typename ParamStore<T>::Param& ParamStore<T>::at(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown param '" + name + "'");
  return params_[it->second];
}

template <typename T>
const typename ParamStore<T>::Param& ParamStore<T>::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw Error("unknown param '" + name + "'");
  return params_[it->second];
}

template <typename T>
Tensor<T> ParamStore<T>::tensor(const std::string& name) {
  Param& p = at(name);
  bool rg = p.trainable && grad_enabled();
  if (rg && p.grad.empty()) p.grad.assign(p.value.size(), T(0));
  return Tensor<T>::view(p.shape, p.value.data(), rg ? p.grad.data() : nullptr, rg);
}

template <typename T>
void ParamStore<T>::zero_grads() {
  for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), T(0));
}

template <typename T>
void ParamStore<T>::set_trainable_group(const std::string& group, bool trainable) {
  bool found = false;
  for (Param& p : params_)
    if (p.group == group) {
      p.trainable = trainable;
      found = true;
    }
  if (!found) throw Error("no params in group '" + group + "'");
}

template <typename T>
std::int64_t ParamStore<T>::scalar_count() const {
  std::int64_t n = 0;
  for (const Param& p : params_) n += static_cast<std::int64_t>(p.value.size());
  return n;
}

template <typename T>
double ParamStore<T>::grad_norm() const {
  double acc = 0;
  for (const Param& p : params_)
    if (p.trainable)
      for (T g : p.grad) acc += static_cast<double>(g) * static_cast<double>(g);
  return std::sqrt(acc);
}

template <typename T>
void ParamStore<T>::scale_grads(double factor) {
  for (Param& p : params_)
    for (T& g : p.grad) g = static_cast<T>(g * factor);
}

template class ParamStore<float>;
template class ParamStore<double>;

}  // namespace harmon::num
