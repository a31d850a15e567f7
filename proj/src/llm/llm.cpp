#include "harmon/llm/llm.hpp"

#include <limits>

#include "harmon/common.hpp"
#include "harmon/numerics/ops.hpp"

namespace harmon::llm {

using num::Tensor;

template <typename T>
LlmModel<T>::LlmModel(num::ParamStore<T>& ps, const LmConfig& cfg, const num::Rng& init)
    : ps_(&ps), cfg_(cfg), stack_(ps, "llm.", cfg.layers, cfg.width, cfg.heads, "llm", init) {
  if (cfg.width % cfg.heads != 0) throw ConfigError("llm: width must be divisible by heads");
  ps.add_normal("llm.tok_embed", {cfg.vocab, cfg.width}, "llm", init, 0.02);
  ps.add_normal("llm.pos_embed", {cfg.max_seq, cfg.width}, "llm", init, 0.02);
  ps.add_normal("llm.head.w", {cfg.width, cfg.vocab}, "llm", init, 0.02);
  ps.add("llm.head.b", {cfg.vocab}, "llm");
  ps.add_normal("proj_in.w1", {cfg.mar_width, cfg.width}, "encoder", init, 0.02);
  ps.add("proj_in.b1", {cfg.width}, "encoder");
  ps.add_normal("proj_in.w2", {cfg.width, cfg.width}, "encoder", init, 0.02);
  ps.add("proj_in.b2", {cfg.width}, "encoder");
  ps.add_normal("proj_out.w1", {cfg.width, cfg.width}, "decoder", init, 0.02);
  ps.add("proj_out.b1", {cfg.width}, "decoder");
  ps.add_normal("proj_out.w2", {cfg.width, cfg.mar_width}, "decoder", init, 0.02);
  ps.add("proj_out.b2", {cfg.mar_width}, "decoder");
}

namespace {

// Additive causal mask [S, P+S]: new position i sees prefix plus new j <= i.
template <typename T>
Tensor<T> causal_mask(int S, int P) {
  const T ninf = -std::numeric_limits<T>::infinity();
  std::vector<T> m(static_cast<std::size_t>(S) * (P + S), T(0));
  for (int i = 0; i < S; ++i)
    for (int j = P + i + 1; j < P + S; ++j) m[static_cast<std::size_t>(i) * (P + S) + j] = ninf;
  return Tensor<T>::from_data({S, P + S}, std::move(m));
}

}  // namespace

template <typename T>
typename LlmModel<T>::ForwardOut LlmModel<T>::forward(const Tensor<T>& embeds, KVCache<T>* cache,
                                                      bool extend_cache,
                                                      const std::vector<std::vector<char>>* key_valid) const {
  using namespace num;
  const int B = embeds.dim(0), S = embeds.dim(1);
  if (embeds.dim(2) != cfg_.width) throw ShapeError("llm: embedding width mismatch");
  const int P = cache ? cache->len : 0;
  if (P + S > cfg_.max_seq) throw LengthError("llm: sequence exceeds max length");

  std::vector<int> pos_ids(static_cast<std::size_t>(B) * S);
  for (int b = 0; b < B; ++b)
    for (int i = 0; i < S; ++i) pos_ids[static_cast<std::size_t>(b) * S + i] = P + i;
  Tensor<T> pos = reshape(embedding(ps_->tensor("llm.pos_embed"), pos_ids), {B, S, cfg_.width});
  Tensor<T> x = add(embeds, pos);
  Tensor<T> mask;
  if (!key_valid) {
    mask = causal_mask<T>(S, P);
  } else {
    // Per-sample [S, P+S] masks: causal plus hidden (padded) key positions.
    if (static_cast<int>(key_valid->size()) != B)
      throw ShapeError("llm: key_valid needs one row per sample");
    const T ninf = -std::numeric_limits<T>::infinity();
    std::vector<T> m(static_cast<std::size_t>(B) * S * (P + S), T(0));
    for (int b = 0; b < B; ++b) {
      const auto& valid = (*key_valid)[b];
      if (static_cast<int>(valid.size()) != P + S)
        throw ShapeError("llm: key_valid must cover prefix plus current tokens");
      for (int i = 0; i < S; ++i)
        for (int j = 0; j < P + S; ++j)
          if (j > P + i || !valid[j])
            m[(static_cast<std::size_t>(b) * S + i) * (P + S) + j] = ninf;
    }
    mask = Tensor<T>::from_data({B, S, P + S}, std::move(m));
  }

  Tensor<T> h;
  if (!cache) {
    h = stack_.forward(x, mask);
  } else {
    if (extend_cache) {
      h = stack_.forward_cached(x, mask, cache->k, cache->v);
      cache->len = P + S;
    } else {
      auto k = cache->k;  // tensor handles: cheap copies, originals untouched
      auto v = cache->v;
      h = stack_.forward_cached(x, mask, k, v);
    }
  }
  ForwardOut out;
  out.hidden = h;
  out.logits = linear(h, ps_->tensor("llm.head.w"), ps_->tensor("llm.head.b"));
  return out;
}

template <typename T>
Tensor<T> LlmModel<T>::embed_tokens(const std::vector<std::vector<int>>& ids) const {
  using namespace num;
  if (ids.empty()) throw ShapeError("llm: empty token batch");
  const int B = static_cast<int>(ids.size());
  const int S = static_cast<int>(ids.front().size());
  std::vector<int> flat;
  flat.reserve(static_cast<std::size_t>(B) * S);
  for (const auto& row : ids) {
    if (static_cast<int>(row.size()) != S) throw ShapeError("llm: ragged token batch");
    flat.insert(flat.end(), row.begin(), row.end());
  }
  return reshape(embedding(ps_->tensor("llm.tok_embed"), flat), {B, S, cfg_.width});
}

template <typename T>
Tensor<T> LlmModel<T>::project_in(const Tensor<T>& z) const {
  using namespace num;
  Tensor<T> h = gelu(linear(z, ps_->tensor("proj_in.w1"), ps_->tensor("proj_in.b1")));
  return linear(h, ps_->tensor("proj_in.w2"), ps_->tensor("proj_in.b2"));
}

template <typename T>
Tensor<T> LlmModel<T>::project_out(const Tensor<T>& h) const {
  using namespace num;
  Tensor<T> y = gelu(linear(h, ps_->tensor("proj_out.w1"), ps_->tensor("proj_out.b1")));
  return linear(y, ps_->tensor("proj_out.w2"), ps_->tensor("proj_out.b2"));
}

template <typename T>
Tensor<T> LlmModel<T>::inject_image(const tok::TokenSequence& prompt, const Tensor<T>& z) const {
  using namespace num;
  const int B = z.dim(0), L = z.dim(1);
  if (z.dim(2) != cfg_.mar_width) throw ShapeError("inject_image: visual width mismatch");
  Tensor<T> visual = project_in(z);

  const tok::Span slot = prompt.find(tok::SpanKind::image_slot);
  std::vector<std::vector<int>> rows(B, prompt.ids);
  Tensor<T> text = embed_tokens(rows);
  if (slot.start < 0) return concat_seq(text, visual);  // generation: [prompt || visual]

  if (slot.len != L) throw ShapeError("inject_image: image slot length != visual arity");
  std::vector<int> idx(L);
  for (int i = 0; i < L; ++i) idx[i] = slot.start + i;
  return scatter_seq(text, std::vector<std::vector<int>>(B, idx), visual);
}

template <typename T>
Tensor<T> LlmModel<T>::extract_updated(const Tensor<T>& hidden, int start, int len) const {
  if (start < 0 || len < 1 || start + len > hidden.dim(1))
    throw ShapeError("extract_updated: slot range out of bounds");
  return project_out(num::slice_seq(hidden, start, len));
}

template <typename T>
std::vector<int> LlmModel<T>::greedy_decode(const Tensor<T>& prompt_embeds, int max_tokens,
                                            int eos_id) const {
  using namespace num;
  if (max_tokens < 1) throw ConfigError("greedy_decode: max_tokens must be >= 1");
  if (prompt_embeds.dim(0) != 1) throw ShapeError("greedy_decode: batch must be 1");
  NoGradGuard ng;

  KVCache<T> cache;
  std::vector<int> out;
  Tensor<T> step = prompt_embeds;
  for (int n = 0; n < max_tokens; ++n) {
    ForwardOut fo = forward(step, &cache, true);
    Tensor<T> last = slice_seq(fo.logits, fo.logits.dim(1) - 1, 1);
    const int tok = argmax_last(reshape(last, {1, cfg_.vocab}))[0];
    out.push_back(tok);
    if (tok == eos_id) break;
    step = embed_tokens({{tok}});
  }
  return out;
}

template struct KVCache<float>;
template struct KVCache<double>;
template class LlmModel<float>;
template class LlmModel<double>;

}  // namespace harmon::llm
