#include "harmon/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "harmon/common.hpp"
#include "harmon/numerics/rng.hpp"

namespace harmon::num {

const GradCheckReport::Entry* GradCheckReport::worst() const {
  const Entry* w = nullptr;
  for (const auto& e : per_param)
    if (!w || e.max_rel_err > w->max_rel_err) w = &e;
  return w;
}

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& fn, ParamStore<T>& store,
                           const GradCheckOptions& opt) {
  if (opt.eps < 1e-6 || opt.eps > 1e-3)
    throw ConfigError("grad_check: eps must lie in [1e-6, 1e-3]");
  if (opt.samples_per_param < 1) throw ConfigError("grad_check: samples_per_param < 1");

  store.zero_grads();
  Tensor<T> loss = fn();
  if (loss.numel() != 1) throw ShapeError("grad_check: fn must return a scalar");
  if (!std::isfinite(static_cast<double>(loss.item())))
    throw NumericsError("grad_check: non-finite loss");
  backward(loss);

  // Snapshot analytic grads before perturbing anything.
  std::vector<std::vector<T>> analytic;
  for (const auto& name : store.names()) analytic.push_back(store.at(name).grad);

  auto eval = [&]() -> double {
    NoGradGuard ng;
    Tensor<T> l = fn();
    double v = static_cast<double>(l.item());
    if (!std::isfinite(v)) throw NumericsError("grad_check: non-finite loss under perturbation");
    return v;
  };

  GradCheckReport report;
  Rng rng(opt.seed);
  std::size_t pi = 0;
  for (const auto& name : store.names()) {
    auto& p = store.at(name);
    const auto& a = analytic[pi++];
    GradCheckReport::Entry entry;
    entry.name = name;
    if (!p.trainable || a.empty()) {
      report.per_param.push_back(entry);
      continue;
    }
    const std::int64_t n = static_cast<std::int64_t>(p.value.size());
    std::vector<std::int64_t> picks;
    if (n <= opt.samples_per_param) {
      for (std::int64_t i = 0; i < n; ++i) picks.push_back(i);
    } else {
      Rng sub = rng.split(pi);
      for (int i = 0; i < opt.samples_per_param; ++i) picks.push_back(sub.next_int(0, n - 1));
    }
    for (std::int64_t i : picks) {
      const T keep = p.value[static_cast<std::size_t>(i)];
      auto central = [&](double h) {
        p.value[static_cast<std::size_t>(i)] = keep + static_cast<T>(h);
        const double up = eval();
        p.value[static_cast<std::size_t>(i)] = keep - static_cast<T>(h);
        const double down = eval();
        p.value[static_cast<std::size_t>(i)] = keep;
        return (up - down) / (2.0 * h);
      };
      const double numeric =
          opt.richardson ? (4.0 * central(opt.eps / 2) - central(opt.eps)) / 3.0
                         : central(opt.eps);
      const double an = static_cast<double>(a[static_cast<std::size_t>(i)]);
      const double rel =
          std::abs(an - numeric) / std::max({std::abs(an), std::abs(numeric), opt.denom_floor});
      entry.max_rel_err = std::max(entry.max_rel_err, rel);
      entry.checked += 1;
    }
    report.max_rel_err = std::max(report.max_rel_err, entry.max_rel_err);
    report.per_param.push_back(entry);
  }
  store.zero_grads();
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>()>&,
                                           ParamStore<float>&, const GradCheckOptions&);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>()>&,
                                            ParamStore<double>&, const GradCheckOptions&);

}  // namespace harmon::num
