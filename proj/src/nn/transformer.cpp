#include "harmon/nn/transformer.hpp"

#include <cmath>

#include "harmon/common.hpp"

namespace harmon::nn {

using num::Tensor;

template <typename T>
TransformerBlock<T>::TransformerBlock(num::ParamStore<T>& ps, std::string prefix, int width,
                                      int heads, const std::string& group, const num::Rng& init)
    : ps_(&ps), prefix_(std::move(prefix)), width_(width), heads_(heads) {
  if (width % heads != 0) throw ConfigError("transformer: width must be divisible by heads");
  const double std = 0.02;
  ps.add_const(prefix_ + "ln1.g", {width}, group, T(1));
  ps.add(prefix_ + "ln1.b", {width}, group);
  for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"})
    ps.add_normal(prefix_ + w, {width, width}, group, init, std);
  for (const char* b : {"attn.bq", "attn.bk", "attn.bv", "attn.bo"})
    ps.add(prefix_ + b, {width}, group);
  ps.add_const(prefix_ + "ln2.g", {width}, group, T(1));
  ps.add(prefix_ + "ln2.b", {width}, group);
  ps.add_normal(prefix_ + "mlp.w1", {width, 4 * width}, group, init, std);
  ps.add(prefix_ + "mlp.b1", {4 * width}, group);
  ps.add_normal(prefix_ + "mlp.w2", {4 * width, width}, group, init, std);
  ps.add(prefix_ + "mlp.b2", {width}, group);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward(const Tensor<T>& x, const Tensor<T>& attn_mask) const {
  Tensor<T> k_out, v_out;
  return forward_cached(x, attn_mask, {}, {}, k_out, v_out);
}

template <typename T>
Tensor<T> TransformerBlock<T>::forward_cached(const Tensor<T>& x, const Tensor<T>& attn_mask,
                                              const Tensor<T>& k_prefix, const Tensor<T>& v_prefix,
                                              Tensor<T>& k_out, Tensor<T>& v_out) const {
  using namespace num;
  ParamStore<T>& ps = *ps_;
  auto p = [&](const char* name) { return ps.tensor(prefix_ + name); };

  Tensor<T> h = layernorm(x, p("ln1.g"), p("ln1.b"));
  Tensor<T> q = split_heads(linear(h, p("attn.wq"), p("attn.bq")), heads_);
  Tensor<T> k = split_heads(linear(h, p("attn.wk"), p("attn.bk")), heads_);
  Tensor<T> v = split_heads(linear(h, p("attn.wv"), p("attn.bv")), heads_);
  if (k_prefix.defined()) {
    // Concatenate along the sequence axis via a [B*H, S, Dh] view.
    auto widen = [&](const Tensor<T>& pre, const Tensor<T>& cur) {
      const int B = cur.dim(0), H = cur.dim(1), Dh = cur.dim(3);
      Tensor<T> a = reshape(pre, {B * H, pre.dim(2), Dh});
      Tensor<T> b = reshape(cur, {B * H, cur.dim(2), Dh});
      Tensor<T> cat = concat_seq(a, b);
      return reshape(cat, {B, H, pre.dim(2) + cur.dim(2), Dh});
    };
    k = widen(k_prefix, k);
    v = widen(v_prefix, v);
  }
  k_out = k;
  v_out = v;
  Tensor<T> attn = merge_heads(sdpa(q, k, v, attn_mask));
  Tensor<T> y = add(x, linear(attn, p("attn.wo"), p("attn.bo")));

  Tensor<T> h2 = layernorm(y, p("ln2.g"), p("ln2.b"));
  Tensor<T> m = linear(gelu(linear(h2, p("mlp.w1"), p("mlp.b1"))), p("mlp.w2"), p("mlp.b2"));
  return add(y, m);
}

template <typename T>
TransformerStack<T>::TransformerStack(num::ParamStore<T>& ps, const std::string& prefix, int layers,
                                      int width, int heads, const std::string& group,
                                      const num::Rng& init)
    : ps_(&ps), prefix_(prefix), width_(width) {
  if (layers <= 0) throw ConfigError("transformer: layers must be positive");
  for (int i = 0; i < layers; ++i)
    blocks_.emplace_back(ps, prefix + "block" + std::to_string(i) + ".", width, heads, group, init);
  ps.add_const(prefix + "ln_f.g", {width}, group, T(1));
  ps.add(prefix + "ln_f.b", {width}, group);
}

template <typename T>
Tensor<T> TransformerStack<T>::forward(const Tensor<T>& x, const Tensor<T>& attn_mask) const {
  Tensor<T> h = x;
  for (const auto& b : blocks_) h = b.forward(h, attn_mask);
  return num::layernorm(h, ps_->tensor(prefix_ + "ln_f.g"), ps_->tensor(prefix_ + "ln_f.b"));
}

template <typename T>
Tensor<T> TransformerStack<T>::forward_cached(const Tensor<T>& x, const Tensor<T>& attn_mask,
                                              std::vector<Tensor<T>>& k_cache,
                                              std::vector<Tensor<T>>& v_cache) const {
  if (k_cache.empty() && v_cache.empty()) {
    k_cache.resize(blocks_.size());
    v_cache.resize(blocks_.size());
  }
  if (k_cache.size() != blocks_.size() || v_cache.size() != blocks_.size())
    throw ShapeError("transformer: cache must hold one entry per layer");
  Tensor<T> h = x;
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    Tensor<T> k_new, v_new;
    h = blocks_[i].forward_cached(h, attn_mask, k_cache[i], v_cache[i], k_new, v_new);
    k_cache[i] = k_new;
    v_cache[i] = v_new;
  }
  return num::layernorm(h, ps_->tensor(prefix_ + "ln_f.g"), ps_->tensor(prefix_ + "ln_f.b"));
}

template <typename T>
std::vector<T> sincos_2d(int gh, int gw, int dim) {
  if (dim % 4 != 0) throw ConfigError("sincos_2d: dim must be divisible by 4");
  const int half = dim / 2;    // channels per axis
  const int bands = half / 2;  // sin/cos pairs per axis
  std::vector<T> out(static_cast<std::size_t>(gh) * gw * dim);
  for (int r = 0; r < gh; ++r) {
    for (int c = 0; c < gw; ++c) {
      T* row = out.data() + (static_cast<std::size_t>(r) * gw + c) * dim;
      for (int i = 0; i < bands; ++i) {
        const double freq = 1.0 / std::pow(10000.0, static_cast<double>(2 * i) / half);
        row[2 * i] = T(std::sin(r * freq));
        row[2 * i + 1] = T(std::cos(r * freq));
        row[half + 2 * i] = T(std::sin(c * freq));
        row[half + 2 * i + 1] = T(std::cos(c * freq));
      }
    }
  }
  return out;
}

template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class TransformerStack<float>;
template class TransformerStack<double>;
template std::vector<float> sincos_2d<float>(int, int, int);
template std::vector<double> sincos_2d<double>(int, int, int);

}  // namespace harmon::nn
