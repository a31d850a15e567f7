#include "harmon/pipelines/bundle.hpp"

#include "harmon/common.hpp"

namespace harmon::pipe {

BundleConfig BundleConfig::desk() {
  BundleConfig c;
  c.mar = mar::MarConfig{};
  c.lm = llm::LmConfig{};
  c.head = diff::DenoiseConfig{};
  c.lm.vocab = tok::Vocab::standard().size();
  c.lm.mar_width = c.mar.width;
  c.head.cond_dim = c.mar.width;
  c.head.patch_dim = c.mar.patch_dim();
  c.validate();
  return c;
}

nlohmann::json BundleConfig::to_json() const {
  return {{"image_size", mar.image_size},
          {"patch", mar.patch},
          {"n_buffer", mar.n_buffer},
          {"width", mar.width},
          {"enc_layers", mar.enc_layers},
          {"dec_layers", mar.dec_layers},
          {"heads", mar.heads},
          {"lm_layers", lm.layers},
          {"lm_heads", lm.heads},
          {"lm_width", lm.width},
          {"vocab", lm.vocab},
          {"max_seq", lm.max_seq},
          {"t_emb_dim", head.t_emb_dim},
          {"head_hidden", head.hidden},
          {"head_layers", head.hidden_layers},
          {"diffusion_T", diffusion_T},
          {"sample_steps", diffusion_sample_steps},
          {"gen_prompt_pad", gen_prompt_pad},
          {"train_mask_min", train_mask_min}};
}

BundleConfig BundleConfig::from_json(const nlohmann::json& j) {
  BundleConfig c;
  try {
    c.mar.image_size = j.at("image_size").get<int>();
    c.mar.patch = j.at("patch").get<int>();
    c.mar.n_buffer = j.at("n_buffer").get<int>();
    c.mar.width = j.at("width").get<int>();
    c.mar.enc_layers = j.at("enc_layers").get<int>();
    c.mar.dec_layers = j.at("dec_layers").get<int>();
    c.mar.heads = j.at("heads").get<int>();
    c.lm.layers = j.at("lm_layers").get<int>();
    c.lm.heads = j.at("lm_heads").get<int>();
    c.lm.width = j.at("lm_width").get<int>();
    c.lm.vocab = j.at("vocab").get<int>();
    c.lm.max_seq = j.at("max_seq").get<int>();
    c.head.t_emb_dim = j.at("t_emb_dim").get<int>();
    c.head.hidden = j.at("head_hidden").get<int>();
    c.head.hidden_layers = j.at("head_layers").get<int>();
    c.diffusion_T = j.at("diffusion_T").get<int>();
    c.diffusion_sample_steps = j.at("sample_steps").get<int>();
    c.gen_prompt_pad = j.at("gen_prompt_pad").get<int>();
    c.train_mask_min = j.at("train_mask_min").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
  // Derived agreements, same as desk().
  c.lm.mar_width = c.mar.width;
  c.head.patch_dim = c.mar.patch_dim();
  c.head.cond_dim = c.mar.width;
  c.validate();
  return c;
}

void BundleConfig::validate() const {
  if (mar.image_size <= 0 || mar.patch <= 0 || mar.image_size % mar.patch != 0)
    throw ConfigError("bundle: image size must be a positive multiple of the patch size");
  if (lm.mar_width != mar.width)
    throw ConfigError("bundle: projector width does not match the visual width");
  if (head.cond_dim != mar.width)
    throw ConfigError("bundle: denoise condition width does not match the visual width");
  if (head.patch_dim != mar.patch_dim())
    throw ConfigError("bundle: denoise patch dim does not match the patchifier");
  if (gen_prompt_pad <= 0)
    throw ConfigError("bundle: gen_prompt_pad must be positive");
  if (train_mask_min <= 0.0 || train_mask_min > 1.0)
    throw ConfigError("bundle: train_mask_min must lie in (0, 1]");
  const int gen_seq = gen_prompt_pad + mar.n_buffer + mar.hw();
  if (gen_seq > lm.max_seq)
    throw ConfigError("bundle: padded prompt plus visual block exceeds max_seq");
  if (diffusion_T < 2 || diffusion_sample_steps < 1 || diffusion_T % diffusion_sample_steps != 0)
    throw ConfigError("bundle: sample steps must evenly divide the diffusion horizon");
}

template <typename T>
ModelBundle<T>::ModelBundle(const BundleConfig& cfg, std::uint64_t init_seed)
    : cfg_(cfg), vocab_(&tok::Vocab::standard()), noise_(cfg.diffusion_T, cfg.diffusion_sample_steps) {
  cfg_.validate();
  if (cfg_.lm.vocab != vocab_->size())
    throw ConfigError("bundle: lm vocab size does not match the vocabulary");
  num::Rng init(init_seed);
  visual_ = std::make_unique<mar::MarModel<T>>(params_, cfg_.mar, init);
  lm_ = std::make_unique<llm::LlmModel<T>>(params_, cfg_.lm, init);
  head_ = std::make_unique<diff::DenoiseHead<T>>(params_, cfg_.head, init);
}

template class ModelBundle<float>;
template class ModelBundle<double>;

}  // namespace harmon::pipe
