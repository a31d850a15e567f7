#include "harmon/numerics/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace harmon::num {

std::int64_t shape_numel(const Shape& s) {
  std::int64_t n = 1;
  for (int d : s) {
    if (d <= 0) throw ShapeError("non-positive dim in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
std::atomic<bool> g_finite_checks{true};
std::atomic<std::uint64_t> g_next_id{1};
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool finite_checks_enabled() { return g_finite_checks.load(std::memory_order_relaxed); }
void set_finite_checks(bool on) { g_finite_checks.store(on, std::memory_order_relaxed); }

std::uint64_t next_tensor_id() { return g_next_id.fetch_add(1, std::memory_order_relaxed); }

template <typename T>
Tensor<T> Tensor<T>::zeros(const Shape& shape, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->numel = shape_numel(shape);
  impl->store.assign(static_cast<std::size_t>(impl->numel), T(0));
  impl->data = impl->store.data();
  impl->requires_grad = requires_grad && grad_enabled();
  if (impl->requires_grad) impl->ensure_grad();
  impl->id = next_tensor_id();
  return Tensor<T>(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::full(const Shape& shape, T value) {
  Tensor<T> t = zeros(shape, false);
  std::fill(t.data(), t.data() + t.numel(), value);
  return t;
}

template <typename T>
Tensor<T> Tensor<T>::from_data(const Shape& shape, std::vector<T> values, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->numel = shape_numel(shape);
  if (impl->numel != static_cast<std::int64_t>(values.size()))
    throw ShapeError("from_data: " + std::to_string(values.size()) + " values for shape " +
                     shape_str(shape));
  impl->store = std::move(values);
  impl->data = impl->store.data();
  impl->requires_grad = requires_grad && grad_enabled();
  if (impl->requires_grad) impl->ensure_grad();
  impl->id = next_tensor_id();
  return Tensor<T>(std::move(impl));
}

template <typename T>
Tensor<T> Tensor<T>::view(const Shape& shape, T* data, T* grad, bool requires_grad) {
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->numel = shape_numel(shape);
  impl->data = data;
  impl->grad = grad;
  impl->requires_grad = requires_grad;
  impl->id = next_tensor_id();
  return Tensor<T>(std::move(impl));
}

template <typename T>
int Tensor<T>::dim(int i) const {
  int r = static_cast<int>(impl_->shape.size());
  if (i < 0) i += r;
  if (i < 0 || i >= r) throw ShapeError("dim index out of range for " + shape_str(impl_->shape));
  return impl_->shape[static_cast<std::size_t>(i)];
}

template <typename T>
T Tensor<T>::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

template <typename T>
std::vector<T> Tensor<T>::to_vector() const {
  return std::vector<T>(impl_->data, impl_->data + impl_->numel);
}

template <typename T>
void backward(const Tensor<T>& loss) {
  if (!loss.defined()) throw ShapeError("backward: undefined tensor");
  if (loss.numel() != 1) throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad) throw Error("backward: loss does not require grad");
  root->ensure_grad();
  root->grad[0] = T(1);

  // Reachable op outputs, executed in decreasing creation order so every
  // consumer finishes accumulating into a tensor before its own rule runs.
  std::vector<TensorImpl<T>*> order;
  std::unordered_set<TensorImpl<T>*> seen;
  std::vector<TensorImpl<T>*> stack{root.get()};
  seen.insert(root.get());
  while (!stack.empty()) {
    TensorImpl<T>* cur = stack.back();
    stack.pop_back();
    if (!cur->node) continue;
    order.push_back(cur);
    for (const auto& p : cur->node->parents)
      if (seen.insert(p.get()).second) stack.push_back(p.get());
  }
  std::sort(order.begin(), order.end(),
            [](const TensorImpl<T>* a, const TensorImpl<T>* b) { return a->id > b->id; });
  for (TensorImpl<T>* t : order)
    if (t->node->backward) t->node->backward();
}

template class Tensor<float>;
template class Tensor<double>;
template void backward<float>(const Tensor<float>&);
template void backward<double>(const Tensor<double>&);

}  // namespace harmon::num
