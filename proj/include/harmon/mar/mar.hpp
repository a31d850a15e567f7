#pragma once

#include <vector>

#include "harmon/nn/transformer.hpp"
#include "harmon/numerics/param_store.hpp"
#include "harmon/numerics/rng.hpp"
#include "harmon/numerics/tensor.hpp"

namespace harmon::mar {

struct MarConfig {
  int image_size = 32;
  int patch = 4;
  int n_buffer = 8;
  int width = 128;
  int enc_layers = 4;
  int dec_layers = 4;
  int heads = 4;

  int grid() const { return image_size / patch; }
  int hw() const { return grid() * grid(); }
  int patch_dim() const { return patch * patch * 3; }
};

// One image cut into hw patches (patch-major, HWC pixels inside each patch)
// plus the set of masked patch indices.
template <typename T>
struct PatchSequence {
  std::vector<T> patches;  // hw * dim
  int h = 0, w = 0;        // patch-grid dims
  int dim = 0;             // per-patch dim = p*p*3
  std::vector<int> mask;   // sorted unique indices < h*w

  int hw() const { return h * w; }
  int m() const { return static_cast<int>(mask.size()); }
};

// pixels: image_size*image_size*3 HWC floats. ShapeError when the image size
// is not divisible by p or the pixel count is wrong.
template <typename T>
PatchSequence<T> patchify(const std::vector<T>& pixels, int image_size, int p);

// Lossless inverse of patchify (the mask is ignored).
template <typename T>
std::vector<T> unpatchify(const PatchSequence<T>& seq, int image_size);

// Uniformly random m-subset of [0, hw), sorted. MaskError when m is out of
// [0, hw].
std::vector<int> sample_mask(int hw, int m, num::Rng& rng);

// Sorted complement of a sorted mask.
std::vector<int> mask_complement(const std::vector<int>& mask, int hw);

// Encoder output: buffer slots first, then one slot per seen patch, with the
// patch indices those slots came from.
template <typename T>
struct EncoderOutput {
  num::Tensor<T> z;                    // [B, n_buffer + hw - m, width]
  int n_buffer = 0;
  std::vector<std::vector<int>> seen;  // [B][hw - m] patch indices, sorted
};

// The masked-autoregressive encoder/decoder pair. Parameters live in the
// caller's store under groups "encoder" / "decoder"; construction registers
// them, forward passes only read.
template <typename T>
class MarModel {
 public:
  MarModel(num::ParamStore<T>& ps, const MarConfig& cfg, const num::Rng& init);

  // patches [B, hw, patch_dim]; seen[b] = sorted indices of unmasked patches,
  // equal length across the batch (may be empty: buffer-only encoding, and may
  // be all of [0, hw): the understanding path). One code path serves both.
  EncoderOutput<T> encode(const num::Tensor<T>& patches,
                          const std::vector<std::vector<int>>& seen) const;

  // cond [B, L, width]: conditioning slots (encoder output, or the LLM-updated
  // version of it, passed wholesale including buffer slots). Returns one
  // condition vector per masked position, [B, m, width]. MaskError when a
  // position list is empty; ShapeError on ragged lists.
  num::Tensor<T> decode(const num::Tensor<T>& cond,
                        const std::vector<std::vector<int>>& mask_positions) const;

  const MarConfig& config() const { return cfg_; }

 private:
  num::ParamStore<T>* ps_;
  MarConfig cfg_;
  nn::TransformerStack<T> enc_, dec_;
  num::Tensor<T> pos_;  // [hw, width] fixed sine-cosine table
};

}  // namespace harmon::mar
