#pragma once

#include <string>
#include <vector>

#include "harmon/numerics/ops.hpp"
#include "harmon/numerics/param_store.hpp"
#include "harmon/numerics/tensor.hpp"

namespace harmon::nn {

// Pre-norm transformer block: x += attn(ln1(x)); x += mlp(ln2(x)). The MLP is
// width -> 4*width -> width with GELU. Parameters are registered in the given
// store under `prefix` at construction; forward() only reads them back, so a
// block is copyable and forward passes are reentrant.
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock(num::ParamStore<T>& ps, std::string prefix, int width, int heads,
                   const std::string& group, const num::Rng& init);

  // x [B,S,W]. attn_mask: default-constructed for full bidirectional attention,
  // else additive [Sq,Sk] / [B,Sq,Sk]. With kv_prefix (inference KV caching),
  // attention keys/values become [cached ++ current]; pass the mask shaped for
  // the widened key length.
  num::Tensor<T> forward(const num::Tensor<T>& x, const num::Tensor<T>& attn_mask) const;

  // Same as forward but prepends `k_prefix`/`v_prefix` (possibly undefined) to
  // the attention keys/values and returns the widened k/v actually attended
  // over ([B,H,prefix+S,Dh]) — the caller's next cache state.
  num::Tensor<T> forward_cached(const num::Tensor<T>& x, const num::Tensor<T>& attn_mask,
                                const num::Tensor<T>& k_prefix, const num::Tensor<T>& v_prefix,
                                num::Tensor<T>& k_out, num::Tensor<T>& v_out) const;

 private:
  num::ParamStore<T>* ps_;
  std::string prefix_;
  int width_;
  int heads_;
};

// A stack of pre-norm blocks followed by a final layernorm.
template <typename T>
class TransformerStack {
 public:
  TransformerStack(num::ParamStore<T>& ps, const std::string& prefix, int layers, int width,
                   int heads, const std::string& group, const num::Rng& init);

  num::Tensor<T> forward(const num::Tensor<T>& x, const num::Tensor<T>& attn_mask = {}) const;

  // KV-cached forward: uses `k_cache`/`v_cache` (one entry per layer; empty
  // vectors start a fresh cache) as the key/value prefix and replaces them with
  // the widened caches. Inference-only (call under NoGradGuard).
  num::Tensor<T> forward_cached(const num::Tensor<T>& x, const num::Tensor<T>& attn_mask,
                                std::vector<num::Tensor<T>>& k_cache,
                                std::vector<num::Tensor<T>>& v_cache) const;

  int layers() const { return static_cast<int>(blocks_.size()); }
  int width() const { return width_; }

 private:
  num::ParamStore<T>* ps_;
  std::string prefix_;
  int width_;
  std::vector<TransformerBlock<T>> blocks_;
};

// 2-D sine-cosine positional table for a gh x gw grid, [gh*gw, dim] row-major
// by grid row. Half the channels encode the row coordinate, half the column.
template <typename T>
std::vector<T> sincos_2d(int gh, int gw, int dim);

}  // namespace harmon::nn
