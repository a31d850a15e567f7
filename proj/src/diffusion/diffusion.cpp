#include "harmon/diffusion/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "harmon/common.hpp"
#include "harmon/numerics/ops.hpp"

namespace harmon::diff {

using num::Tensor;

NoiseSchedule::NoiseSchedule(int T, int sample_steps) : T_(T), sample_steps_(sample_steps) {
  if (T < 2) throw ScheduleError("schedule: T must be >= 2");
  if (sample_steps < 1 || sample_steps > T || T % sample_steps != 0)
    throw ScheduleError("schedule: sample_steps must divide T");
  const double s = 0.008;
  auto f = [&](double t) {
    double v = std::cos((t / T + s) / (1 + s) * M_PI / 2.0);
    return v * v;
  };
  alpha_bar_.resize(T + 1);
  double prev = 1.0;
  for (int t = 0; t <= T; ++t) {
    double ab = f(t) / f(0);
    // Keep the per-step beta inside (0, 0.999] like the cosine-schedule paper.
    ab = std::max(ab, prev * 0.001);
    alpha_bar_[t] = ab;
    prev = ab;
  }
  const int stride = T / sample_steps;
  for (int t = T; t >= stride; t -= stride) taus_.push_back(t);
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > T_) throw ScheduleError("schedule: t out of [0, T]");
  return alpha_bar_[t];
}

double NoiseSchedule::beta(int t) const {
  if (t < 1 || t > T_) throw ScheduleError("schedule: t out of [1, T]");
  return 1.0 - alpha_bar_[t] / alpha_bar_[t - 1];
}

template <typename T>
Tensor<T> add_noise(const NoiseSchedule& sched, const Tensor<T>& x0, const std::vector<int>& ts,
                    const Tensor<T>& eps) {
  const int R = x0.dim(0), D = x0.dim(1);
  if (static_cast<int>(ts.size()) != R) throw ShapeError("add_noise: one timestep per row");
  if (eps.dim(0) != R || eps.dim(1) != D) throw ShapeError("add_noise: eps shape mismatch");
  auto xv = x0.to_vector();
  auto ev = eps.to_vector();
  std::vector<T> out(xv.size());
  for (int r = 0; r < R; ++r) {
    const int t = ts[r];
    if (t < 1 || t > sched.T()) throw ScheduleError("add_noise: t out of [1, T]");
    const T a = T(std::sqrt(sched.alpha_bar(t)));
    const T b = T(std::sqrt(1.0 - sched.alpha_bar(t)));
    for (int d = 0; d < D; ++d) {
      const std::size_t i = static_cast<std::size_t>(r) * D + d;
      out[i] = a * xv[i] + b * ev[i];
    }
  }
  return Tensor<T>::from_data({R, D}, std::move(out));
}

template <typename T>
Tensor<T> timestep_embedding(const std::vector<int>& ts, int dim) {
  if (dim % 2 != 0) throw ConfigError("timestep_embedding: dim must be even");
  const int R = static_cast<int>(ts.size());
  const int half = dim / 2;
  std::vector<T> out(static_cast<std::size_t>(R) * dim);
  for (int r = 0; r < R; ++r)
    for (int i = 0; i < half; ++i) {
      const double freq = std::exp(-std::log(10000.0) * i / half);
      out[static_cast<std::size_t>(r) * dim + 2 * i] = T(std::sin(ts[r] * freq));
      out[static_cast<std::size_t>(r) * dim + 2 * i + 1] = T(std::cos(ts[r] * freq));
    }
  return Tensor<T>::from_data({R, dim}, std::move(out));
}

template <typename T>
DenoiseHead<T>::DenoiseHead(num::ParamStore<T>& ps, const DenoiseConfig& cfg, const num::Rng& init)
    : ps_(&ps), cfg_(cfg) {
  int in = cfg.patch_dim + cfg.t_emb_dim + cfg.cond_dim;
  for (int l = 0; l < cfg.hidden_layers; ++l) {
    const std::string i = std::to_string(l);
    ps.add_normal("dh.w" + i, {in, cfg.hidden}, "decoder", init, 0.02);
    ps.add("dh.b" + i, {cfg.hidden}, "decoder");
    in = cfg.hidden;
  }
  ps.add_normal("dh.w_out", {in, cfg.patch_dim}, "decoder", init, 0.02);
  ps.add("dh.b_out", {cfg.patch_dim}, "decoder");
}

template <typename T>
Tensor<T> DenoiseHead<T>::forward(const Tensor<T>& x_t, const std::vector<int>& ts,
                                  const Tensor<T>& z) const {
  using namespace num;
  if (x_t.dim(1) != cfg_.patch_dim) throw ShapeError("denoise head: bad patch dim");
  if (z.dim(0) != x_t.dim(0) || z.dim(1) != cfg_.cond_dim)
    throw ShapeError("denoise head: bad condition shape");
  Tensor<T> temb = timestep_embedding<T>(ts, cfg_.t_emb_dim);
  Tensor<T> h = concat_last(concat_last(x_t, temb), z);
  for (int l = 0; l < cfg_.hidden_layers; ++l) {
    const std::string i = std::to_string(l);
    h = gelu(linear(h, ps_->tensor("dh.w" + i), ps_->tensor("dh.b" + i)));
  }
  return linear(h, ps_->tensor("dh.w_out"), ps_->tensor("dh.b_out"));
}

template <typename T>
Tensor<T> noise_objective(const Tensor<T>& eps_hat, const Tensor<T>& eps) {
  // mse averages over every element; scaling by the patch dim turns it into
  // the mean-over-rows of per-row squared L2 norms.
  return num::scale(num::mse(eps_hat, eps), T(eps.dim(1)));
}

template <typename T>
Tensor<T> diffusion_loss_at(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                            const Tensor<T>& x_gt, const Tensor<T>& z, const std::vector<int>& ts,
                            const Tensor<T>& eps) {
  Tensor<T> x_t = add_noise(sched, x_gt, ts, eps);
  return noise_objective(head.forward(x_t, ts, z), eps);
}

template <typename T>
Tensor<T> diffusion_loss(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                         const Tensor<T>& x_gt, const Tensor<T>& z, num::Rng& rng) {
  const int R = x_gt.dim(0), D = x_gt.dim(1);
  std::vector<int> ts(R);
  for (int r = 0; r < R; ++r) ts[r] = static_cast<int>(rng.next_int(1, sched.T()));
  std::vector<T> ev(static_cast<std::size_t>(R) * D);
  rng.fill_normal(ev, 0.0, 1.0);
  return diffusion_loss_at(head, sched, x_gt, z, ts, Tensor<T>::from_data({R, D}, std::move(ev)));
}

template <typename T>
Tensor<T> sample_loop(const Predictor<T>& pred, const NoiseSchedule& sched, int rows, int dim,
                      num::Rng& rng, const SampleOptions& opt) {
  num::NoGradGuard ng;
  num::Rng base = rng.split(rng.next_u64());
  std::vector<num::Rng> row_rng;
  row_rng.reserve(rows);
  for (int r = 0; r < rows; ++r) row_rng.push_back(base.split(r));

  std::vector<T> xv(static_cast<std::size_t>(rows) * dim);
  for (int r = 0; r < rows; ++r)
    for (int d = 0; d < dim; ++d) xv[static_cast<std::size_t>(r) * dim + d] = T(row_rng[r].next_normal());

  const auto& taus = sched.sample_timesteps();
  for (std::size_t i = 0; i < taus.size(); ++i) {
    const int t = taus[i];
    const int t_prev = (i + 1 < taus.size()) ? taus[i + 1] : 0;
    Tensor<T> x = Tensor<T>::from_data({rows, dim}, xv);
    std::vector<T> ev = pred(x, t).to_vector();

    const double ab = sched.alpha_bar(t);
    const double ab_prev = sched.alpha_bar(t_prev);
    const double beta_t = 1.0 - ab / ab_prev;
    const double var = beta_t * (1.0 - ab_prev) / (1.0 - ab);
    const double sigma = (t_prev > 0) ? std::sqrt(var) : 0.0;
    const double c_x0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab);
    const double c_xt = std::sqrt(ab / ab_prev) * (1.0 - ab_prev) / (1.0 - ab);

    for (int r = 0; r < rows; ++r)
      for (int d = 0; d < dim; ++d) {
        const std::size_t k = static_cast<std::size_t>(r) * dim + d;
        double x0 = (xv[k] - std::sqrt(1.0 - ab) * double(ev[k])) / std::sqrt(ab);
        if (opt.clip_x0) x0 = std::clamp(x0, -opt.clip, opt.clip);
        double mean = c_x0 * x0 + c_xt * xv[k];
        xv[k] = T(mean + sigma * (t_prev > 0 ? row_rng[r].next_normal() : 0.0));
      }
  }
  return Tensor<T>::from_data({rows, dim}, std::move(xv));
}

template <typename T>
Tensor<T> sample_patch(const DenoiseHead<T>& head, const NoiseSchedule& sched,
                       const Tensor<T>& z_cond, const Tensor<T>& z_uncond, double w, num::Rng& rng,
                       const SampleOptions& opt) {
  using namespace num;
  if (w < 0) throw ConfigError("sample_patch: negative guidance weight");
  if (z_cond.dim(0) != z_uncond.dim(0) || z_cond.dim(1) != z_uncond.dim(1))
    throw ShapeError("sample_patch: branch condition shapes differ");
  const int rows = z_cond.dim(0);
  const int dim = head.config().patch_dim;

  Predictor<T> pred = [&](const Tensor<T>& x_t, int t) -> Tensor<T> {
    std::vector<int> ts(rows, t);
    if (w == 1.0) return head.forward(x_t, ts, z_cond);
    if (w == 0.0) return head.forward(x_t, ts, z_uncond);
    Tensor<T> ec = head.forward(x_t, ts, z_cond);
    Tensor<T> eu = head.forward(x_t, ts, z_uncond);
    return add(eu, scale(sub(ec, eu), T(w)));
  };
  return sample_loop(pred, sched, rows, dim, rng, opt);
}

#define HARMON_INSTANTIATE_DIFF(T)                                                                \
  template Tensor<T> add_noise<T>(const NoiseSchedule&, const Tensor<T>&, const std::vector<int>&, \
                                  const Tensor<T>&);                                              \
  template Tensor<T> timestep_embedding<T>(const std::vector<int>&, int);                         \
  template class DenoiseHead<T>;                                                                  \
  template Tensor<T> noise_objective<T>(const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> diffusion_loss_at<T>(const DenoiseHead<T>&, const NoiseSchedule&,            \
                                          const Tensor<T>&, const Tensor<T>&,                     \
                                          const std::vector<int>&, const Tensor<T>&);             \
  template Tensor<T> diffusion_loss<T>(const DenoiseHead<T>&, const NoiseSchedule&,               \
                                       const Tensor<T>&, const Tensor<T>&, num::Rng&);            \
  template Tensor<T> sample_loop<T>(const Predictor<T>&, const NoiseSchedule&, int, int,          \
                                    num::Rng&, const SampleOptions&);                             \
  template Tensor<T> sample_patch<T>(const DenoiseHead<T>&, const NoiseSchedule&,                 \
                                     const Tensor<T>&, const Tensor<T>&, double, num::Rng&,       \
                                     const SampleOptions&);

HARMON_INSTANTIATE_DIFF(float)
HARMON_INSTANTIATE_DIFF(double)

}  // namespace harmon::diff
