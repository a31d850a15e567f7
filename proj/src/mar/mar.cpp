#include "harmon/mar/mar.hpp"

#include <algorithm>
#include <cmath>

#include "harmon/common.hpp"
#include "harmon/numerics/ops.hpp"

namespace harmon::mar {

using num::Tensor;

template <typename T>
PatchSequence<T> patchify(const std::vector<T>& pixels, int image_size, int p) {
  if (p <= 0 || image_size % p != 0) throw ShapeError("patchify: image size not divisible by p");
  const std::size_t want = static_cast<std::size_t>(image_size) * image_size * 3;
  if (pixels.size() != want) throw ShapeError("patchify: wrong pixel count");
  PatchSequence<T> seq;
  seq.h = seq.w = image_size / p;
  seq.dim = p * p * 3;
  seq.patches.resize(static_cast<std::size_t>(seq.hw()) * seq.dim);
  for (int gr = 0; gr < seq.h; ++gr)
    for (int gc = 0; gc < seq.w; ++gc) {
      T* dst = seq.patches.data() + (static_cast<std::size_t>(gr) * seq.w + gc) * seq.dim;
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) {
          const T* src = pixels.data() + ((static_cast<std::size_t>(gr * p + r) * image_size) +
                                          (gc * p + c)) * 3;
          *dst++ = src[0];
          *dst++ = src[1];
          *dst++ = src[2];
        }
    }
  return seq;
}

template <typename T>
std::vector<T> unpatchify(const PatchSequence<T>& seq, int image_size) {
  const int p = static_cast<int>(std::sqrt(seq.dim / 3));
  if (p * p * 3 != seq.dim || seq.h * p != image_size || seq.w * p != image_size)
    throw ShapeError("unpatchify: grid does not tile the image");
  if (seq.patches.size() != static_cast<std::size_t>(seq.hw()) * seq.dim)
    throw ShapeError("unpatchify: wrong patch buffer size");
  std::vector<T> pixels(static_cast<std::size_t>(image_size) * image_size * 3);
  for (int gr = 0; gr < seq.h; ++gr)
    for (int gc = 0; gc < seq.w; ++gc) {
      const T* src = seq.patches.data() + (static_cast<std::size_t>(gr) * seq.w + gc) * seq.dim;
      for (int r = 0; r < p; ++r)
        for (int c = 0; c < p; ++c) {
          T* dst = pixels.data() + ((static_cast<std::size_t>(gr * p + r) * image_size) +
                                    (gc * p + c)) * 3;
          dst[0] = *src++;
          dst[1] = *src++;
          dst[2] = *src++;
        }
    }
  return pixels;
}

std::vector<int> sample_mask(int hw, int m, num::Rng& rng) {
  if (m < 0 || m > hw) throw MaskError("sample_mask: m out of [0, hw]");
  std::vector<int> idx(hw);
  for (int i = 0; i < hw; ++i) idx[i] = i;
  // Partial Fisher-Yates: the first m entries end up a uniform m-subset.
  for (int i = 0; i < m; ++i) std::swap(idx[i], idx[rng.next_int(i, hw - 1)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

std::vector<int> mask_complement(const std::vector<int>& mask, int hw) {
  std::vector<int> out;
  out.reserve(hw - mask.size());
  std::size_t j = 0;
  for (int i = 0; i < hw; ++i) {
    if (j < mask.size() && mask[j] == i)
      ++j;
    else
      out.push_back(i);
  }
  if (j != mask.size()) throw MaskError("mask_complement: indices out of range or unsorted");
  return out;
}

template <typename T>
MarModel<T>::MarModel(num::ParamStore<T>& ps, const MarConfig& cfg, const num::Rng& init)
    : ps_(&ps),
      cfg_(cfg),
      enc_(ps, "enc.", cfg.enc_layers, cfg.width, cfg.heads, "encoder", init),
      dec_(ps, "dec.", cfg.dec_layers, cfg.width, cfg.heads, "decoder", init) {
  ps.add_normal("enc.patch_embed.w", {cfg.patch_dim(), cfg.width}, "encoder", init, 0.02);
  ps.add("enc.patch_embed.b", {cfg.width}, "encoder");
  ps.add_normal("enc.buffer", {cfg.n_buffer, cfg.width}, "encoder", init, 0.02);
  ps.add_normal("dec.mask_embed", {cfg.width}, "decoder", init, 0.02);
  pos_ = Tensor<T>::from_data({cfg.hw(), cfg.width},
                              nn::sincos_2d<T>(cfg.grid(), cfg.grid(), cfg.width));
}

namespace {

void require_rect(const std::vector<std::vector<int>>& lists, int hw, const char* op) {
  for (const auto& l : lists) {
    if (l.size() != lists.front().size()) throw ShapeError(std::string(op) + ": ragged index lists");
    for (int i : l)
      if (i < 0 || i >= hw) throw MaskError(std::string(op) + ": patch index out of range");
  }
}

}  // namespace

template <typename T>
EncoderOutput<T> MarModel<T>::encode(const Tensor<T>& patches,
                                     const std::vector<std::vector<int>>& seen) const {
  using namespace num;
  const int B = patches.dim(0);
  if (B < 1) throw ShapeError("encode: empty batch");
  if (patches.dim(1) != cfg_.hw() || patches.dim(2) != cfg_.patch_dim())
    throw ShapeError("encode: patches must be [B, hw, p*p*3]");
  if (static_cast<int>(seen.size()) != B) throw ShapeError("encode: one seen list per sample");
  require_rect(seen, cfg_.hw(), "encode");

  Tensor<T> buffer = broadcast_to(ps_->tensor("enc.buffer"), {B, cfg_.n_buffer, cfg_.width});
  Tensor<T> x;
  if (seen.front().empty()) {
    x = buffer;  // fully masked: buffer embeddings only
  } else {
    Tensor<T> tok = linear(gather_seq(patches, seen), ps_->tensor("enc.patch_embed.w"),
                           ps_->tensor("enc.patch_embed.b"));
    Tensor<T> pos = gather_seq(broadcast_to(pos_, {B, cfg_.hw(), cfg_.width}), seen);
    x = concat_seq(buffer, add(tok, pos));
  }
  EncoderOutput<T> out;
  out.z = enc_.forward(x);
  out.n_buffer = cfg_.n_buffer;
  out.seen = seen;
  return out;
}

template <typename T>
Tensor<T> MarModel<T>::decode(const Tensor<T>& cond,
                              const std::vector<std::vector<int>>& mask_positions) const {
  using namespace num;
  const int B = cond.dim(0);
  if (cond.dim(2) != cfg_.width) throw ShapeError("decode: conditioning width mismatch");
  if (static_cast<int>(mask_positions.size()) != B)
    throw ShapeError("decode: one position list per sample");
  if (mask_positions.empty() || mask_positions.front().empty())
    throw MaskError("decode: needs at least one masked position");
  require_rect(mask_positions, cfg_.hw(), "decode");
  const int m = static_cast<int>(mask_positions.front().size());

  Tensor<T> mask_tok = broadcast_to(ps_->tensor("dec.mask_embed"), {B, m, cfg_.width});
  Tensor<T> pos = gather_seq(broadcast_to(pos_, {B, cfg_.hw(), cfg_.width}), mask_positions);
  Tensor<T> x = concat_seq(add(mask_tok, pos), cond);
  Tensor<T> z = dec_.forward(x);
  return slice_seq(z, 0, m);
}

template struct PatchSequence<float>;
template struct PatchSequence<double>;
template PatchSequence<float> patchify<float>(const std::vector<float>&, int, int);
template PatchSequence<double> patchify<double>(const std::vector<double>&, int, int);
template std::vector<float> unpatchify<float>(const PatchSequence<float>&, int);
template std::vector<double> unpatchify<double>(const PatchSequence<double>&, int);
template class MarModel<float>;
template class MarModel<double>;

}  // namespace harmon::mar
