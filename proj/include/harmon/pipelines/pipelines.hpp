#pragma once

#include <string>
#include <vector>

#include "harmon/pipelines/bundle.hpp"
#include "harmon/pipelines/schedule.hpp"
#include "harmon/synthdata/dataset.hpp"
#include "harmon/tokenizer/templates.hpp"

namespace harmon::pipe {

enum class Task { text, image_to_text, text_to_image };

// One homogeneous training micro-batch. Token rows are PAD-padded to a shared
// length. weights[b][i] is the cross-entropy weight on predicting token i from
// position i-1 (index 0 never carries loss). Understanding rows hold IMG
// placeholders across the visual slot; generation rows are the fixed-length
// padded prompt alone — the visual block is appended at forward time.
template <typename T>
struct TaskBatch {
  Task task = Task::text;
  std::vector<std::vector<int>> tokens;
  std::vector<std::vector<T>> weights;  // empty for text_to_image
  std::vector<std::vector<T>> images;   // [B] HWC pixels; empty for text
  std::vector<std::string> captions;    // text_to_image ("" = dropped caption)
  std::vector<int> prompt_len;          // text_to_image: pre-padding lengths
  int slot_start = -1;                  // image_to_text: visual block range
  int slot_len = 0;
};

template <typename T>
TaskBatch<T> make_text_batch(const ModelBundle<T>& model, const std::vector<std::string>& texts);

// Draws one QA pair per sample from its qa list.
template <typename T>
TaskBatch<T> make_und_batch(const ModelBundle<T>& model,
                            const std::vector<data::ImageSample>& samples, num::Rng& rng);

// captions[i] conditions samples[i]; an empty caption is the dropped-caption
// (unconditional) row. LengthError when a prompt overflows gen_prompt_pad.
template <typename T>
TaskBatch<T> make_gen_batch(const ModelBundle<T>& model,
                            const std::vector<data::ImageSample>& samples,
                            const std::vector<std::string>& captions);

template <typename T>
struct ForwardStats {
  num::Tensor<T> loss;  // scalar on the parameter graph
  int supervised = 0;   // weighted CE targets, or noised patch rows
};

// One task graph, teacher-forced:
//   text           next-token cross-entropy over non-PAD positions
//   image_to_text  full-image encode, visual slot scatter, answer-span CE
//   text_to_image  masked encode -> LLM -> decode -> denoising loss at the
//                  masked positions; rng draws the shared mask count, the
//                  per-sample masks, and the diffusion (t, eps)
template <typename T>
ForwardStats<T> unified_forward(const ModelBundle<T>& model, const TaskBatch<T>& batch,
                                num::Rng& rng);

struct GenOptions {
  int K = 64;        // AR steps
  double cfg = 3.0;  // guidance weight
  diff::SampleOptions sampling{};
};

// K-step masked-autoregressive generation with per-branch prompt KV caches and
// classifier-free guidance; returns HWC pixels. Every patch is written exactly
// once, in the order of a permutation drawn from rng.
template <typename T>
std::vector<T> generate_image(const ModelBundle<T>& model, const std::string& caption,
                              num::Rng& rng, const GenOptions& opt = {});

// Full-image (nothing masked) encode -> understanding prompt -> greedy decode.
// The EOS token is stripped from the returned text.
template <typename T>
std::string answer_question(const ModelBundle<T>& model, const std::vector<T>& pixels,
                            const std::string& question, int max_tokens = 8);

}  // namespace harmon::pipe
