#pragma once

#include <functional>
#include <vector>

#include "harmon/numerics/param_store.hpp"
#include "harmon/numerics/rng.hpp"
#include "harmon/numerics/tensor.hpp"

namespace harmon::diff {

// Cosine noise schedule over T training steps with a strided subset for
// sampling. alpha_bar(0) == 1 exactly; alpha_bar is strictly decreasing and
// every per-step beta lies in (0,1).
class NoiseSchedule {
 public:
  explicit NoiseSchedule(int T = 1000, int sample_steps = 100);

  int T() const { return T_; }
  int sample_steps() const { return sample_steps_; }
  // t in [0, T]; ScheduleError outside.
  double alpha_bar(int t) const;
  double beta(int t) const;  // t in [1, T]
  // Descending sampler timesteps, e.g. T, T-10, ..., 10 for (1000, 100).
  const std::vector<int>& sample_timesteps() const { return taus_; }

 private:
  int T_;
  int sample_steps_;
  std::vector<double> alpha_bar_;  // [0..T]
  std::vector<int> taus_;
};

// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, row r using ts[r] in [1, T].
// Pure data transform (inputs carry no gradient).
template <typename T>
num::Tensor<T> add_noise(const NoiseSchedule& sched, const num::Tensor<T>& x0,
                         const std::vector<int>& ts, const num::Tensor<T>& eps);

// Sinusoidal embedding of integer timesteps, [ts.size(), dim]. No gradient.
template <typename T>
num::Tensor<T> timestep_embedding(const std::vector<int>& ts, int dim);

struct DenoiseConfig {
  int patch_dim = 48;
  int cond_dim = 128;
  int t_emb_dim = 64;
  int hidden = 256;
  int hidden_layers = 3;
};

// The noise estimator: MLP over [x_t | t-embedding | condition z], predicting
// the noise in x_t. Parameters register under "dh." in group "decoder" (the
// head trains at the image-decoder learning rate).
template <typename T>
class DenoiseHead {
 public:
  DenoiseHead(num::ParamStore<T>& ps, const DenoiseConfig& cfg, const num::Rng& init);

  // x_t [R, patch_dim], ts.size() == R, z [R, cond_dim] -> eps_hat [R, patch_dim].
  num::Tensor<T> forward(const num::Tensor<T>& x_t, const std::vector<int>& ts,
                         const num::Tensor<T>& z) const;

  const DenoiseConfig& config() const { return cfg_; }

 private:
  num::ParamStore<T>* ps_;
  DenoiseConfig cfg_;
};

// Mean over rows of the squared noise-prediction residual summed over the
// patch dim: E ||eps - eps_hat||^2. A zero predictor on standard-normal noise
// scores ~patch_dim.
template <typename T>
num::Tensor<T> noise_objective(const num::Tensor<T>& eps_hat, const num::Tensor<T>& eps);

// Deterministic core of the training loss: noise x_gt at the given (ts, eps)
// and score the head's prediction. Gradients flow into the head and z.
template <typename T>
num::Tensor<T> diffusion_loss_at(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                                 const num::Tensor<T>& x_gt, const num::Tensor<T>& z,
                                 const std::vector<int>& ts, const num::Tensor<T>& eps);

// Samples t ~ U[1, T] and eps ~ N(0, I) per row, then defers to
// diffusion_loss_at.
template <typename T>
num::Tensor<T> diffusion_loss(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                              const num::Tensor<T>& x_gt, const num::Tensor<T>& z, num::Rng& rng);

struct SampleOptions {
  bool clip_x0 = true;   // clamp the x0 estimate each step
  double clip = 1.0;     // to [-clip, clip]
};

// eps predictor over a whole batch at one timestep: (x_t [R,D], t) -> [R,D].
template <typename T>
using Predictor = std::function<num::Tensor<T>(const num::Tensor<T>&, int)>;

// DDPM ancestral sampling over the strided schedule. Row r draws its noise
// from rng-substream r, so results do not depend on evaluation order.
template <typename T>
num::Tensor<T> sample_loop(const Predictor<T>& pred, const NoiseSchedule& sched, int rows, int dim,
                           num::Rng& rng, const SampleOptions& opt = {});

// Classifier-free-guided sampling: eps = eps_u + w (eps_c - eps_u), with the
// w == 0 / w == 1 cases collapsing exactly to single-branch prediction.
template <typename T>
num::Tensor<T> sample_patch(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                            const num::Tensor<T>& z_cond, const num::Tensor<T>& z_uncond, double w,
                            num::Rng& rng, const SampleOptions& opt = {});

}  // namespace harmon::diff
