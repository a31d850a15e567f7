#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "harmon/common.hpp"

namespace harmon::num {

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

// Thread-local autodiff switch. Ops record backward closures only while enabled.
bool grad_enabled();

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// When on (the default), public compute ops verify their inputs are finite and
// throw NumericsError otherwise.
bool finite_checks_enabled();
void set_finite_checks(bool on);

template <typename T>
struct TensorImpl;

template <typename T>
struct Node {
  std::vector<std::shared_ptr<TensorImpl<T>>> parents;
  std::function<void()> backward;
};

template <typename T>
struct TensorImpl {
  Shape shape;
  std::int64_t numel = 0;
  std::vector<T> store;       // empty when viewing external or aliased memory
  T* data = nullptr;
  std::vector<T> grad_store;  // empty until needed, or when grad is external/aliased
  T* grad = nullptr;
  bool requires_grad = false;
  std::uint64_t id = 0;  // creation order; backward runs in decreasing id
  std::unique_ptr<Node<T>> node;
  std::shared_ptr<TensorImpl<T>> alias_of;  // keeps aliased storage alive

  void ensure_grad() {
    if (grad == nullptr) {
      grad_store.assign(static_cast<std::size_t>(numel), T(0));
      grad = grad_store.data();
    }
  }
};

std::uint64_t next_tensor_id();

// Value-type handle over a shared tensor payload. Copies share storage.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<TensorImpl<T>> impl) : impl_(std::move(impl)) {}

  static Tensor zeros(const Shape& shape, bool requires_grad = false);
  static Tensor full(const Shape& shape, T value);
  static Tensor from_data(const Shape& shape, std::vector<T> values, bool requires_grad = false);
  // Wraps caller-owned buffers; used for parameter-store views. grad may be null.
  static Tensor view(const Shape& shape, T* data, T* grad, bool requires_grad);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  // Negative i counts from the back.
  int dim(int i) const;
  std::int64_t numel() const { return impl_->numel; }
  T* data() { return impl_->data; }
  const T* data() const { return impl_->data; }
  T* grad() { return impl_->grad; }
  const T* grad() const { return impl_->grad; }
  bool requires_grad() const { return impl_->requires_grad; }
  T item() const;
  std::vector<T> to_vector() const;
  const std::shared_ptr<TensorImpl<T>>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl<T>> impl_;
};

// Reverse-mode sweep from a scalar. Seeds d(loss)/d(loss) = 1 and accumulates
// (+=) into every reachable requires-grad tensor, so parameter gradients add up
// across calls until explicitly zeroed.
template <typename T>
void backward(const Tensor<T>& loss);

}  // namespace harmon::num
