#pragma once

#include <cstdint>
#include <memory>

#include <json.hpp>

#include "harmon/diffusion/diffusion.hpp"
#include "harmon/llm/llm.hpp"
#include "harmon/mar/mar.hpp"
#include "harmon/numerics/param_store.hpp"
#include "harmon/tokenizer/vocab.hpp"

namespace harmon::pipe {

struct BundleConfig {
  mar::MarConfig mar;
  llm::LmConfig lm;
  diff::DenoiseConfig head;
  int diffusion_T = 1000;
  int diffusion_sample_steps = 100;
  // Generation prompts are padded to this fixed length (hidden behind the
  // attention mask) so the visual block always starts at the same position in
  // training and inference, for any caption length.
  int gen_prompt_pad = 30;
  // Training-time masked fraction is uniform over [train_mask_min*hw, hw].
  double train_mask_min = 0.7;

  // Widths the modules must agree on, derived once here.
  static BundleConfig desk();  // the 32x32 toy-world configuration
  void validate() const;       // ConfigError on inconsistent widths

  // Full field round-trip, so checkpoints can describe their own architecture.
  nlohmann::json to_json() const;
  static BundleConfig from_json(const nlohmann::json& j);
};

// One model: shared visual encoder/decoder, LLM with projectors, denoising
// head, schedule, vocabulary — all parameters in a single store.
template <typename T>
class ModelBundle {
 public:
  ModelBundle(const BundleConfig& cfg, std::uint64_t init_seed);

  const BundleConfig& config() const { return cfg_; }
  num::ParamStore<T>& params() { return params_; }
  const num::ParamStore<T>& params() const { return params_; }
  const tok::Vocab& vocab() const { return *vocab_; }
  const mar::MarModel<T>& visual() const { return *visual_; }
  const llm::LlmModel<T>& lm() const { return *lm_; }
  const diff::DenoiseHead<T>& head() const { return *head_; }
  const diff::NoiseSchedule& noise() const { return noise_; }

  // Visual slot count the LLM sees for a full image: buffer + hw.
  int full_slots() const { return cfg_.mar.n_buffer + cfg_.mar.hw(); }

 private:
  BundleConfig cfg_;
  num::ParamStore<T> params_;
  const tok::Vocab* vocab_;
  std::unique_ptr<mar::MarModel<T>> visual_;
  std::unique_ptr<llm::LlmModel<T>> lm_;
  std::unique_ptr<diff::DenoiseHead<T>> head_;
  diff::NoiseSchedule noise_;
};

}  // namespace harmon::pipe
