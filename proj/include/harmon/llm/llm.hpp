#pragma once

#include <vector>

#include "harmon/nn/transformer.hpp"
#include "harmon/numerics/param_store.hpp"
#include "harmon/numerics/rng.hpp"
#include "harmon/numerics/tensor.hpp"
#include "harmon/tokenizer/templates.hpp"

namespace harmon::llm {

struct LmConfig {
  int layers = 4;
  int heads = 4;
  int width = 128;
  int vocab = 44;
  int max_seq = 256;
  int mar_width = 128;  // visual slot width on the MAR side of the projectors
};

// Append-only per-layer key/value prefix. len is the number of cached
// positions; entries are [B, H, len, Dh].
template <typename T>
struct KVCache {
  std::vector<num::Tensor<T>> k, v;
  int len = 0;
};

// Decoder-only causal LM plus the two projector MLPs bridging MAR width to
// LLM width and back. Parameter groups: "llm" for the LM itself, "encoder"
// for the in-projector (it feeds the LLM from the visual encoder), "decoder"
// for the out-projector (it feeds the image decoder).
template <typename T>
class LlmModel {
 public:
  LlmModel(num::ParamStore<T>& ps, const LmConfig& cfg, const num::Rng& init);

  struct ForwardOut {
    num::Tensor<T> hidden;  // [B, S, width]
    num::Tensor<T> logits;  // [B, S, vocab]
  };

  // embeds [B, S, width] are content embeddings; positions cache->len .. +S-1
  // are added inside. Causal: position i sees the cached prefix plus new
  // positions <= i. With extend_cache the cache absorbs the new k/v (incremental
  // decoding); without, it is left untouched (re-fed conditioning prefix).
  // key_valid (optional, [B][prefix+S]) marks attendable key positions; false
  // entries (padding) are hidden from every query. LengthError when prefix + S
  // exceeds max_seq.
  ForwardOut forward(const num::Tensor<T>& embeds, KVCache<T>* cache = nullptr,
                     bool extend_cache = true,
                     const std::vector<std::vector<char>>* key_valid = nullptr) const;

  // Equal-length id rows -> [B, S, width] token-embedding lookups.
  num::Tensor<T> embed_tokens(const std::vector<std::vector<int>>& ids) const;

  // MAR width <-> LLM width projector MLPs (two layers, GELU).
  num::Tensor<T> project_in(const num::Tensor<T>& z) const;
  num::Tensor<T> project_out(const num::Tensor<T>& h) const;

  // Builds the multimodal content-embedding sequence for one prompt shared
  // across the batch of z [B, L, mar_width]. A template with an image_slot
  // span gets the slot filled in place (slot length must equal L ->
  // ShapeError); a plain prompt gets the projected visual sequence appended
  // after it.
  num::Tensor<T> inject_image(const tok::TokenSequence& prompt, const num::Tensor<T>& z) const;

  // Hidden rows [start, start+len) mapped through the out-projector; the
  // visual-slot provenance is the caller's (start, len). ShapeError out of
  // bounds.
  num::Tensor<T> extract_updated(const num::Tensor<T>& hidden, int start, int len) const;

  // Argmax continuation of a [1, S, width] content-embedding prompt, stopping
  // at EOS (included) or after max_tokens. Uses incremental KV caching.
  std::vector<int> greedy_decode(const num::Tensor<T>& prompt_embeds, int max_tokens,
                                 int eos_id) const;

  const LmConfig& config() const { return cfg_; }

 private:
  num::ParamStore<T>* ps_;
  LmConfig cfg_;
  nn::TransformerStack<T> stack_;
};

}  // namespace harmon::llm
