#pragma once

#include <deque>
#include <string>
#include <unordered_map>
#include <vector>

#include "harmon/numerics/rng.hpp"
#include "harmon/numerics/tensor.hpp"

namespace harmon::num {

// Named parameters with their gradient buffers. A parameter's grad buffer stays
// empty until the first trainable tensor() view materializes it; the optimizer
// treats an empty buffer on a trainable param as a missing gradient.
template <typename T>
class ParamStore {
 public:
  struct Param {
    std::string name;
    std::string group;  // learning-rate / freezing group, e.g. "encoder"
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // empty until materialized
    bool trainable = true;
  };

  // Zero-initialized; fails on duplicate names.
  Param& add(const std::string& name, const Shape& shape, const std::string& group,
             bool trainable = true);
  // add + N(0, stddev) init from a substream keyed by the name, so values do not
  // depend on registration order.
  Param& add_normal(const std::string& name, const Shape& shape, const std::string& group,
                    const Rng& init_rng, double stddev);
  Param& add_const(const std::string& name, const Shape& shape, const std::string& group,
                   T fill);

  bool has(const std::string& name) const;
  Param& at(const std::string& name);
  const Param& at(const std::string& name) const;
  // Insertion order.
  const std::vector<std::string>& names() const { return order_; }

  // Autodiff view over the param's buffers. Materializes the grad buffer when the
  // param is trainable and grad mode is on.
  Tensor<T> tensor(const std::string& name);

  void zero_grads();
  void set_trainable_group(const std::string& group, bool trainable);

  std::size_t size() const { return order_.size(); }
  std::int64_t scalar_count() const;
  // Global L2 norm over materialized grads of trainable params.
  double grad_norm() const;
  // In-place scale of all materialized grads.
  void scale_grads(double factor);

 private:
  std::deque<Param> params_;  // deque: references stay valid as params are added
  std::vector<std::string> order_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace harmon::num
