#include "harmon/numerics/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <cstring>
#include <limits>

#include "harmon/numerics/threading.hpp"

namespace harmon::num {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using CMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void req(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

template <typename T>
void req_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined tensor argument");
}

// Registers the backward rule when grad mode is on and any parent needs it.
template <typename T>
void attach(Tensor<T>& out, std::vector<std::shared_ptr<TensorImpl<T>>> parents,
            std::function<void()> bw) {
  if (!grad_enabled()) return;
  bool any = false;
  for (const auto& p : parents) any = any || p->requires_grad;
  if (!any) return;
  auto oi = out.impl();
  oi->requires_grad = true;
  oi->ensure_grad();
  for (const auto& p : parents)
    if (p->requires_grad) p->ensure_grad();
  oi->node = std::make_unique<Node<T>>();
  oi->node->parents = std::move(parents);
  oi->node->backward = std::move(bw);
}

template <typename T>
bool is_suffix(const Shape& small, const Shape& big) {
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

}  // namespace

template <typename T>
void check_finite(const Tensor<T>& t, const char* op) {
  if (!finite_checks_enabled()) return;
  const T* p = t.data();
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i]))
      throw NumericsError(std::string(op) + ": non-finite value at flat index " +
                          std::to_string(i));
  }
}

// ---- matmul / linear ----

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "matmul");
  req_defined(b, "matmul");
  req(a.shape().size() == 2 && b.shape().size() == 2,
      "matmul: expects rank-2 inputs, got " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  req(a.dim(1) == b.dim(0),
      "matmul: inner dims differ, " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  check_finite(a, "matmul");
  check_finite(b, "matmul");
  const int m = a.dim(0), k = a.dim(1), n = b.dim(1);
  auto out = Tensor<T>::zeros({m, n});
  CMatMap<T> A(a.data(), m, k), B(b.data(), k, n);
  MatMap<T>(out.data(), m, n).noalias() = A * B;
  attach(out, {a.impl(), b.impl()}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), m, k, n] {
    CMatMap<T> A(ai->data, m, k), B(bi->data, k, n), G(oi->grad, m, n);
    if (ai->grad) MatMap<T>(ai->grad, m, k).noalias() += G * B.transpose();
    if (bi->grad) MatMap<T>(bi->grad, k, n).noalias() += A.transpose() * G;
  });
  return out;
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  req_defined(x, "linear");
  req_defined(w, "linear");
  req(w.shape().size() == 2, "linear: weight must be rank 2, got " + shape_str(w.shape()));
  req(!x.shape().empty() && x.dim(-1) == w.dim(0),
      "linear: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  const int in = w.dim(0), onum = w.dim(1);
  if (bias.defined())
    req(bias.shape() == Shape{onum}, "linear: bias " + shape_str(bias.shape()) + " vs out dim " +
                                         std::to_string(onum));
  check_finite(x, "linear");
  check_finite(w, "linear");
  if (bias.defined()) check_finite(bias, "linear");
  const std::int64_t rows = x.numel() / in;
  Shape os = x.shape();
  os.back() = onum;
  auto out = Tensor<T>::zeros(os);
  CMatMap<T> X(x.data(), rows, in), W(w.data(), in, onum);
  MatMap<T> O(out.data(), rows, onum);
  O.noalias() = X * W;
  if (bias.defined()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> bvec(bias.data(), onum);
    O.rowwise() += bvec;
  }
  std::vector<std::shared_ptr<TensorImpl<T>>> parents{x.impl(), w.impl()};
  if (bias.defined()) parents.push_back(bias.impl());
  attach(out, std::move(parents),
         [xi = x.impl(), wi = w.impl(), bi = bias.defined() ? bias.impl() : nullptr,
          oi = out.impl(), rows, in, onum] {
           CMatMap<T> X(xi->data, rows, in), W(wi->data, in, onum), G(oi->grad, rows, onum);
           if (xi->grad) MatMap<T>(xi->grad, rows, in).noalias() += G * W.transpose();
           if (wi->grad) MatMap<T>(wi->grad, in, onum).noalias() += X.transpose() * G;
           if (bi && bi->grad)
             Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bi->grad, onum) += G.colwise().sum();
         });
  return out;
}

// ---- elementwise ----

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "add");
  req_defined(b, "add");
  req(is_suffix<T>(b.shape(), a.shape()),
      "add: " + shape_str(b.shape()) + " is not a trailing suffix of " + shape_str(a.shape()));
  check_finite(a, "add");
  check_finite(b, "add");
  const std::int64_t n = a.numel(), bn = b.numel();
  auto out = Tensor<T>::zeros(a.shape());
  const T* pa = a.data();
  const T* pb = b.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) po[i] = pa[i] + pb[i % bn];
  attach(out, {a.impl(), b.impl()}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n, bn] {
    const T* g = oi->grad;
    if (ai->grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[i] += g[i];
    if (bi->grad)
      for (std::int64_t i = 0; i < n; ++i) bi->grad[i % bn] += g[i];
  });
  return out;
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "sub");
  req_defined(b, "sub");
  req(a.shape() == b.shape(),
      "sub: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_finite(a, "sub");
  check_finite(b, "sub");
  const std::int64_t n = a.numel();
  auto out = Tensor<T>::zeros(a.shape());
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] - b.data()[i];
  attach(out, {a.impl(), b.impl()}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
    const T* g = oi->grad;
    if (ai->grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[i] += g[i];
    if (bi->grad)
      for (std::int64_t i = 0; i < n; ++i) bi->grad[i] -= g[i];
  });
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "mul");
  req_defined(b, "mul");
  req(a.shape() == b.shape(),
      "mul: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_finite(a, "mul");
  check_finite(b, "mul");
  const std::int64_t n = a.numel();
  auto out = Tensor<T>::zeros(a.shape());
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = a.data()[i] * b.data()[i];
  attach(out, {a.impl(), b.impl()}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
    const T* g = oi->grad;
    if (ai->grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[i] += g[i] * bi->data[i];
    if (bi->grad)
      for (std::int64_t i = 0; i < n; ++i) bi->grad[i] += g[i] * ai->data[i];
  });
  return out;
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T c) {
  req_defined(a, "scale");
  check_finite(a, "scale");
  if (!std::isfinite(static_cast<double>(c))) throw NumericsError("scale: non-finite factor");
  const std::int64_t n = a.numel();
  auto out = Tensor<T>::zeros(a.shape());
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = c * a.data()[i];
  attach(out, {a.impl()}, [ai = a.impl(), oi = out.impl(), n, c] {
    if (ai->grad)
      for (std::int64_t i = 0; i < n; ++i) ai->grad[i] += c * oi->grad[i];
  });
  return out;
}

// ---- nonlinearities / normalization ----

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  req_defined(x, "gelu");
  check_finite(x, "gelu");
  constexpr T kC = T(0.7978845608028654);  // sqrt(2/pi)
  constexpr T kK = T(0.044715);
  const std::int64_t n = x.numel();
  auto out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t i = 0; i < n; ++i) {
    T v = px[i];
    T t = std::tanh(kC * (v + kK * v * v * v));
    po[i] = T(0.5) * v * (T(1) + t);
  }
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), n] {
    if (!xi->grad) return;
    for (std::int64_t i = 0; i < n; ++i) {
      T v = xi->data[i];
      T t = std::tanh(kC * (v + kK * v * v * v));
      T d = T(0.5) * (T(1) + t) + T(0.5) * v * (T(1) - t * t) * kC * (T(1) + T(3) * kK * v * v);
      xi->grad[i] += oi->grad[i] * d;
    }
  });
  return out;
}

template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  req_defined(x, "softmax");
  req(!x.shape().empty(), "softmax: rank-0 input");
  check_finite(x, "softmax");
  const int d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  auto out = Tensor<T>::zeros(x.shape());
  const T* px = x.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T* yr = po + r * d;
    T m = xr[0];
    for (int i = 1; i < d; ++i) m = std::max(m, xr[i]);
    T s = T(0);
    for (int i = 0; i < d; ++i) {
      yr[i] = std::exp(xr[i] - m);
      s += yr[i];
    }
    T inv = T(1) / s;
    for (int i = 0; i < d; ++i) yr[i] *= inv;
  }
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), rows, d] {
    if (!xi->grad) return;
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* y = oi->data + r * d;
      const T* g = oi->grad + r * d;
      T* dx = xi->grad + r * d;
      T dot = T(0);
      for (int i = 0; i < d; ++i) dot += g[i] * y[i];
      for (int i = 0; i < d; ++i) dx[i] += y[i] * (g[i] - dot);
    }
  });
  return out;
}

template <typename T>
Tensor<T> layernorm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, T eps) {
  req_defined(x, "layernorm");
  req_defined(gamma, "layernorm");
  req_defined(beta, "layernorm");
  req(!x.shape().empty(), "layernorm: rank-0 input");
  const int d = x.dim(-1);
  req(gamma.shape() == Shape{d} && beta.shape() == Shape{d},
      "layernorm: gamma/beta must be [" + std::to_string(d) + "]");
  check_finite(x, "layernorm");
  check_finite(gamma, "layernorm");
  check_finite(beta, "layernorm");
  const std::int64_t rows = x.numel() / d;
  auto out = Tensor<T>::zeros(x.shape());
  std::vector<T> mean(static_cast<std::size_t>(rows)), rstd(static_cast<std::size_t>(rows));
  const T* px = x.data();
  const T* pg = gamma.data();
  const T* pb = beta.data();
  T* po = out.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = px + r * d;
    T mu = T(0);
    for (int i = 0; i < d; ++i) mu += xr[i];
    mu /= T(d);
    T var = T(0);
    for (int i = 0; i < d; ++i) var += (xr[i] - mu) * (xr[i] - mu);
    var /= T(d);
    T rs = T(1) / std::sqrt(var + eps);
    mean[static_cast<std::size_t>(r)] = mu;
    rstd[static_cast<std::size_t>(r)] = rs;
    T* yr = po + r * d;
    for (int i = 0; i < d; ++i) yr[i] = pg[i] * ((xr[i] - mu) * rs) + pb[i];
  }
  attach(out, {x.impl(), gamma.impl(), beta.impl()},
         [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), oi = out.impl(),
          mean = std::move(mean), rstd = std::move(rstd), rows, d] {
           for (std::int64_t r = 0; r < rows; ++r) {
             const T* xr = xi->data + r * d;
             const T* g = oi->grad + r * d;
             const T mu = mean[static_cast<std::size_t>(r)];
             const T rs = rstd[static_cast<std::size_t>(r)];
             if (gi->grad || bi->grad) {
               for (int i = 0; i < d; ++i) {
                 T xh = (xr[i] - mu) * rs;
                 if (gi->grad) gi->grad[i] += g[i] * xh;
                 if (bi->grad) bi->grad[i] += g[i];
               }
             }
             if (xi->grad) {
               // dx = rs * (gy - mean(gy) - xhat * mean(gy*xhat)), gy = gamma*dy
               T m1 = T(0), m2 = T(0);
               for (int i = 0; i < d; ++i) {
                 T gy = gi->data[i] * g[i];
                 T xh = (xr[i] - mu) * rs;
                 m1 += gy;
                 m2 += gy * xh;
               }
               m1 /= T(d);
               m2 /= T(d);
               T* dx = xi->grad + r * d;
               for (int i = 0; i < d; ++i) {
                 T gy = gi->data[i] * g[i];
                 T xh = (xr[i] - mu) * rs;
                 dx[i] += rs * (gy - m1 - xh * m2);
               }
             }
           }
         });
  return out;
}

// ---- lookup / attention ----

template <typename T>
Tensor<T> embedding(const Tensor<T>& table, const std::vector<int>& ids) {
  req_defined(table, "embedding");
  req(table.shape().size() == 2, "embedding: table must be rank 2, got " + shape_str(table.shape()));
  check_finite(table, "embedding");
  const int v = table.dim(0), d = table.dim(1);
  for (int id : ids)
    req(id >= 0 && id < v, "embedding: id " + std::to_string(id) + " outside [0," +
                               std::to_string(v) + ")");
  const int n = static_cast<int>(ids.size());
  req(n > 0, "embedding: empty id list");
  auto out = Tensor<T>::zeros({n, d});
  for (int i = 0; i < n; ++i)
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * d,
                table.data() + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d,
                sizeof(T) * static_cast<std::size_t>(d));
  attach(out, {table.impl()}, [ti = table.impl(), oi = out.impl(), ids, n, d] {
    if (!ti->grad) return;
    for (int i = 0; i < n; ++i) {
      T* dst = ti->grad + static_cast<std::int64_t>(ids[static_cast<std::size_t>(i)]) * d;
      const T* src = oi->grad + static_cast<std::int64_t>(i) * d;
      for (int j = 0; j < d; ++j) dst[j] += src[j];
    }
  });
  return out;
}

template <typename T>
Tensor<T> sdpa(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Tensor<T>& mask) {
  req_defined(q, "sdpa");
  req_defined(k, "sdpa");
  req_defined(v, "sdpa");
  req(q.shape().size() == 4 && k.shape().size() == 4 && v.shape().size() == 4,
      "sdpa: q/k/v must be [B,H,S,Dh]");
  const int B = q.dim(0), H = q.dim(1), Sq = q.dim(2), Dh = q.dim(3);
  const int Sk = k.dim(2);
  req(k.dim(0) == B && k.dim(1) == H && k.dim(3) == Dh, "sdpa: k shape " + shape_str(k.shape()));
  req(v.shape() == k.shape(), "sdpa: v shape " + shape_str(v.shape()) + " vs k " +
                                  shape_str(k.shape()));
  bool mask_per_batch = false;
  if (mask.defined()) {
    if (mask.shape() == Shape{Sq, Sk}) {
      mask_per_batch = false;
    } else if (mask.shape() == Shape{B, Sq, Sk}) {
      mask_per_batch = true;
    } else {
      throw ShapeError("sdpa: mask " + shape_str(mask.shape()) + " must be [Sq,Sk] or [B,Sq,Sk]");
    }
    const T* pm = mask.data();
    const T neg_inf = -std::numeric_limits<T>::infinity();
    for (std::int64_t i = 0; i < mask.numel(); ++i)
      if (pm[i] != T(0) && pm[i] != neg_inf)
        throw NumericsError("sdpa: mask entries must be 0 or -inf");
  }
  check_finite(q, "sdpa");
  check_finite(k, "sdpa");
  check_finite(v, "sdpa");
  const T sc = T(1) / std::sqrt(T(Dh));
  auto out = Tensor<T>::zeros({B, H, Sq, Dh});
  auto probs = std::make_shared<std::vector<T>>(
      static_cast<std::size_t>(std::int64_t(B) * H * Sq * Sk));
  const std::int64_t qstride = std::int64_t(Sq) * Dh, kstride = std::int64_t(Sk) * Dh,
                     pstride = std::int64_t(Sq) * Sk;
  parallel_for(std::int64_t(B) * H, [&](std::int64_t lo, std::int64_t hi) {
    for (std::int64_t bh = lo; bh < hi; ++bh) {
      const std::int64_t b = bh / H;
      CMatMap<T> Q(q.data() + bh * qstride, Sq, Dh), K(k.data() + bh * kstride, Sk, Dh),
          V(v.data() + bh * kstride, Sk, Dh);
      RowMat<T> S(Sq, Sk);
      S.noalias() = Q * K.transpose() * sc;
      if (mask.defined()) {
        const T* pm = mask.data() + (mask_per_batch ? b * pstride : 0);
        S += CMatMap<T>(pm, Sq, Sk);
      }
      T* P = probs->data() + bh * pstride;
      for (int r = 0; r < Sq; ++r) {
        T* sr = S.data() + static_cast<std::int64_t>(r) * Sk;
        T m = sr[0];
        for (int i = 1; i < Sk; ++i) m = std::max(m, sr[i]);
        T sum = T(0);
        T* pr = P + static_cast<std::int64_t>(r) * Sk;
        for (int i = 0; i < Sk; ++i) {
          pr[i] = std::exp(sr[i] - m);
          sum += pr[i];
        }
        T inv = T(1) / sum;
        for (int i = 0; i < Sk; ++i) pr[i] *= inv;
      }
      MatMap<T>(out.data() + bh * qstride, Sq, Dh).noalias() = CMatMap<T>(P, Sq, Sk) * V;
    }
  });
  check_finite(out, "sdpa");
  std::vector<std::shared_ptr<TensorImpl<T>>> parents{q.impl(), k.impl(), v.impl()};
  if (mask.defined()) parents.push_back(mask.impl());  // lifetime only; no grad flows to it
  attach(out, std::move(parents),
         [qi = q.impl(), ki = k.impl(), vi = v.impl(), oi = out.impl(), probs, B, H, Sq, Sk, Dh,
          sc, qstride, kstride, pstride] {
           for (std::int64_t bh = 0; bh < std::int64_t(B) * H; ++bh) {
             CMatMap<T> Q(qi->data + bh * qstride, Sq, Dh), K(ki->data + bh * kstride, Sk, Dh),
                 V(vi->data + bh * kstride, Sk, Dh), G(oi->grad + bh * qstride, Sq, Dh),
                 P(probs->data() + bh * pstride, Sq, Sk);
             RowMat<T> dP(Sq, Sk);
             dP.noalias() = G * V.transpose();
             if (vi->grad)
               MatMap<T>(vi->grad + bh * kstride, Sk, Dh).noalias() += P.transpose() * G;
             // dS = P o (dP - rowsum(dP o P))
             RowMat<T> dS(Sq, Sk);
             for (int r = 0; r < Sq; ++r) {
               T dot = T(0);
               for (int i = 0; i < Sk; ++i) dot += dP(r, i) * P(r, i);
               for (int i = 0; i < Sk; ++i) dS(r, i) = P(r, i) * (dP(r, i) - dot);
             }
             if (qi->grad)
               MatMap<T>(qi->grad + bh * qstride, Sq, Dh).noalias() += dS * K * sc;
             if (ki->grad)
               MatMap<T>(ki->grad + bh * kstride, Sk, Dh).noalias() += dS.transpose() * Q * sc;
           }
         });
  return out;
}

// ---- losses ----

template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int>& targets,
                        const std::vector<T>& weights) {
  req_defined(logits, "cross_entropy");
  req(logits.shape().size() == 2,
      "cross_entropy: logits must be [R,V], got " + shape_str(logits.shape()));
  const int R = logits.dim(0), V = logits.dim(1);
  req(static_cast<int>(targets.size()) == R, "cross_entropy: " + std::to_string(targets.size()) +
                                                 " targets for " + std::to_string(R) + " rows");
  req(weights.empty() || static_cast<int>(weights.size()) == R,
      "cross_entropy: weight count mismatch");
  for (int t : targets)
    req(t >= 0 && t < V, "cross_entropy: target " + std::to_string(t) + " outside [0," +
                             std::to_string(V) + ")");
  check_finite(logits, "cross_entropy");
  T wsum = T(0);
  for (int r = 0; r < R; ++r) wsum += weights.empty() ? T(1) : weights[static_cast<std::size_t>(r)];
  req(wsum > T(0), "cross_entropy: all weights zero");

  auto probs = std::make_shared<std::vector<T>>(static_cast<std::size_t>(std::int64_t(R) * V));
  T loss = T(0);
  const T* pl = logits.data();
  for (int r = 0; r < R; ++r) {
    const T* lr = pl + static_cast<std::int64_t>(r) * V;
    T m = lr[0];
    for (int i = 1; i < V; ++i) m = std::max(m, lr[i]);
    T s = T(0);
    T* pr = probs->data() + static_cast<std::int64_t>(r) * V;
    for (int i = 0; i < V; ++i) {
      pr[i] = std::exp(lr[i] - m);
      s += pr[i];
    }
    T inv = T(1) / s;
    for (int i = 0; i < V; ++i) pr[i] *= inv;
    T w = weights.empty() ? T(1) : weights[static_cast<std::size_t>(r)];
    loss -= w * (lr[targets[static_cast<std::size_t>(r)]] - m - std::log(s));
  }
  loss /= wsum;
  if (!std::isfinite(static_cast<double>(loss))) throw NumericsError("cross_entropy: non-finite loss");
  auto out = Tensor<T>::from_data({1}, {loss});
  attach(out, {logits.impl()},
         [li = logits.impl(), oi = out.impl(), probs, targets, weights, wsum, R, V] {
           if (!li->grad) return;
           const T g = oi->grad[0];
           for (int r = 0; r < R; ++r) {
             const T w = weights.empty() ? T(1) : weights[static_cast<std::size_t>(r)];
             if (w == T(0)) continue;
             const T f = g * w / wsum;
             const T* pr = probs->data() + static_cast<std::int64_t>(r) * V;
             T* dl = li->grad + static_cast<std::int64_t>(r) * V;
             const int t = targets[static_cast<std::size_t>(r)];
             for (int i = 0; i < V; ++i) dl[i] += f * (pr[i] - (i == t ? T(1) : T(0)));
           }
         });
  return out;
}

template <typename T>
Tensor<T> mse(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "mse");
  req_defined(b, "mse");
  req(a.shape() == b.shape(),
      "mse: shapes differ, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  check_finite(a, "mse");
  check_finite(b, "mse");
  const std::int64_t n = a.numel();
  T acc = T(0);
  for (std::int64_t i = 0; i < n; ++i) {
    T d = a.data()[i] - b.data()[i];
    acc += d * d;
  }
  acc /= T(n);
  if (!std::isfinite(static_cast<double>(acc))) throw NumericsError("mse: non-finite loss");
  auto out = Tensor<T>::from_data({1}, {acc});
  attach(out, {a.impl(), b.impl()}, [ai = a.impl(), bi = b.impl(), oi = out.impl(), n] {
    const T f = oi->grad[0] * T(2) / T(n);
    for (std::int64_t i = 0; i < n; ++i) {
      T d = f * (ai->data[i] - bi->data[i]);
      if (ai->grad) ai->grad[i] += d;
      if (bi->grad) bi->grad[i] -= d;
    }
  });
  return out;
}

// ---- shape & indexing ----

template <typename T>
Tensor<T> reshape(const Tensor<T>& x, const Shape& shape) {
  req_defined(x, "reshape");
  req(shape_numel(shape) == x.numel(), "reshape: " + shape_str(x.shape()) + " to " +
                                           shape_str(shape) + " changes element count");
  auto xi = x.impl();
  auto impl = std::make_shared<TensorImpl<T>>();
  impl->shape = shape;
  impl->numel = xi->numel;
  impl->data = xi->data;
  impl->grad = xi->grad;
  impl->requires_grad = xi->requires_grad && grad_enabled();
  impl->alias_of = xi;
  impl->id = next_tensor_id();
  if (impl->requires_grad) {
    // Shares both value and grad storage; the node only links the walk through.
    impl->node = std::make_unique<Node<T>>();
    impl->node->parents = {xi};
  }
  return Tensor<T>(impl);
}

template <typename T>
Tensor<T> broadcast_to(const Tensor<T>& x, const Shape& target) {
  req_defined(x, "broadcast_to");
  req(is_suffix<T>(x.shape(), target), "broadcast_to: " + shape_str(x.shape()) +
                                           " is not a trailing suffix of " + shape_str(target));
  const std::int64_t bn = x.numel(), n = shape_numel(target);
  auto out = Tensor<T>::zeros(target);
  for (std::int64_t i = 0; i < n; ++i) out.data()[i] = x.data()[i % bn];
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), n, bn] {
    if (!xi->grad) return;
    for (std::int64_t i = 0; i < n; ++i) xi->grad[i % bn] += oi->grad[i];
  });
  return out;
}

template <typename T>
Tensor<T> concat_seq(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "concat_seq");
  req_defined(b, "concat_seq");
  req(a.shape().size() == 3 && b.shape().size() == 3, "concat_seq: expects [B,S,D] inputs");
  req(a.dim(0) == b.dim(0) && a.dim(2) == b.dim(2),
      "concat_seq: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const int B = a.dim(0), S1 = a.dim(1), S2 = b.dim(1), D = a.dim(2);
  auto out = Tensor<T>::zeros({B, S1 + S2, D});
  const std::int64_t r1 = std::int64_t(S1) * D, r2 = std::int64_t(S2) * D, ro = r1 + r2;
  for (int bi2 = 0; bi2 < B; ++bi2) {
    std::memcpy(out.data() + bi2 * ro, a.data() + bi2 * r1, sizeof(T) * r1);
    std::memcpy(out.data() + bi2 * ro + r1, b.data() + bi2 * r2, sizeof(T) * r2);
  }
  attach(out, {a.impl(), b.impl()},
         [ai = a.impl(), bi = b.impl(), oi = out.impl(), B, r1, r2, ro] {
           for (int bb = 0; bb < B; ++bb) {
             const T* g = oi->grad + bb * ro;
             if (ai->grad)
               for (std::int64_t i = 0; i < r1; ++i) ai->grad[bb * r1 + i] += g[i];
             if (bi->grad)
               for (std::int64_t i = 0; i < r2; ++i) bi->grad[bb * r2 + i] += g[r1 + i];
           }
         });
  return out;
}

template <typename T>
Tensor<T> slice_seq(const Tensor<T>& x, int start, int len) {
  req_defined(x, "slice_seq");
  req(x.shape().size() == 3, "slice_seq: expects [B,S,D], got " + shape_str(x.shape()));
  const int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  req(start >= 0 && len > 0 && start + len <= S,
      "slice_seq: range [" + std::to_string(start) + "," + std::to_string(start + len) +
          ") outside sequence of length " + std::to_string(S));
  auto out = Tensor<T>::zeros({B, len, D});
  const std::int64_t rx = std::int64_t(S) * D, rs = std::int64_t(len) * D;
  for (int b = 0; b < B; ++b)
    std::memcpy(out.data() + b * rs, x.data() + b * rx + std::int64_t(start) * D, sizeof(T) * rs);
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), B, D, start, rx, rs] {
    if (!xi->grad) return;
    for (int b = 0; b < B; ++b) {
      T* dst = xi->grad + b * rx + std::int64_t(start) * D;
      const T* g = oi->grad + b * rs;
      for (std::int64_t i = 0; i < rs; ++i) dst[i] += g[i];
    }
  });
  return out;
}

template <typename T>
Tensor<T> concat_last(const Tensor<T>& a, const Tensor<T>& b) {
  req_defined(a, "concat_last");
  req_defined(b, "concat_last");
  req(a.shape().size() == b.shape().size() && !a.shape().empty(),
      "concat_last: rank mismatch, " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Shape lead(a.shape().begin(), a.shape().end() - 1);
  Shape leadb(b.shape().begin(), b.shape().end() - 1);
  req(lead == leadb, "concat_last: leading dims differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  const int D1 = a.dim(-1), D2 = b.dim(-1);
  const std::int64_t rows = a.numel() / D1;
  Shape os = a.shape();
  os.back() = D1 + D2;
  auto out = Tensor<T>::zeros(os);
  for (std::int64_t r = 0; r < rows; ++r) {
    std::memcpy(out.data() + r * (D1 + D2), a.data() + r * D1, sizeof(T) * D1);
    std::memcpy(out.data() + r * (D1 + D2) + D1, b.data() + r * D2, sizeof(T) * D2);
  }
  attach(out, {a.impl(), b.impl()},
         [ai = a.impl(), bi = b.impl(), oi = out.impl(), rows, D1, D2] {
           for (std::int64_t r = 0; r < rows; ++r) {
             const T* g = oi->grad + r * (D1 + D2);
             if (ai->grad)
               for (int i = 0; i < D1; ++i) ai->grad[r * D1 + i] += g[i];
             if (bi->grad)
               for (int i = 0; i < D2; ++i) bi->grad[r * D2 + i] += g[D1 + i];
           }
         });
  return out;
}

namespace {
template <typename T>
void check_idx(const std::vector<std::vector<int>>& idx, int B, int S, const char* op,
               bool distinct) {
  req(static_cast<int>(idx.size()) == B,
      std::string(op) + ": index batch " + std::to_string(idx.size()) + " vs tensor batch " +
          std::to_string(B));
  const std::size_t g = idx.empty() ? 0 : idx[0].size();
  for (const auto& row : idx) {
    req(row.size() == g, std::string(op) + ": ragged index rows");
    std::vector<bool> seen(distinct ? static_cast<std::size_t>(S) : 0);
    for (int i : row) {
      req(i >= 0 && i < S, std::string(op) + ": index " + std::to_string(i) + " outside [0," +
                               std::to_string(S) + ")");
      if (distinct) {
        if (seen[static_cast<std::size_t>(i)])
          throw ShapeError(std::string(op) + ": duplicate index " + std::to_string(i));
        seen[static_cast<std::size_t>(i)] = true;
      }
    }
  }
}
}  // namespace

template <typename T>
Tensor<T> gather_seq(const Tensor<T>& x, const std::vector<std::vector<int>>& idx) {
  req_defined(x, "gather_seq");
  req(x.shape().size() == 3, "gather_seq: expects [B,S,D], got " + shape_str(x.shape()));
  const int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  check_idx<T>(idx, B, S, "gather_seq", false);
  const int G = idx.empty() ? 0 : static_cast<int>(idx[0].size());
  req(G > 0, "gather_seq: empty index set");
  auto out = Tensor<T>::zeros({B, G, D});
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g)
      std::memcpy(out.data() + (std::int64_t(b) * G + g) * D,
                  x.data() + (std::int64_t(b) * S + idx[b][g]) * D, sizeof(T) * D);
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), idx, B, S, G, D] {
    if (!xi->grad) return;
    for (int b = 0; b < B; ++b)
      for (int g = 0; g < G; ++g) {
        T* dst = xi->grad + (std::int64_t(b) * S + idx[b][g]) * D;
        const T* src = oi->grad + (std::int64_t(b) * G + g) * D;
        for (int i = 0; i < D; ++i) dst[i] += src[i];
      }
  });
  return out;
}

template <typename T>
Tensor<T> scatter_seq(const Tensor<T>& base, const std::vector<std::vector<int>>& idx,
                      const Tensor<T>& rows) {
  req_defined(base, "scatter_seq");
  req_defined(rows, "scatter_seq");
  req(base.shape().size() == 3 && rows.shape().size() == 3,
      "scatter_seq: expects [B,S,D] base and [B,G,D] rows");
  const int B = base.dim(0), S = base.dim(1), D = base.dim(2);
  req(rows.dim(0) == B && rows.dim(2) == D,
      "scatter_seq: rows " + shape_str(rows.shape()) + " vs base " + shape_str(base.shape()));
  const int G = rows.dim(1);
  check_idx<T>(idx, B, S, "scatter_seq", true);
  req(!idx.empty() && static_cast<int>(idx[0].size()) == G, "scatter_seq: index count vs rows");
  auto out = Tensor<T>::zeros({B, S, D});
  std::memcpy(out.data(), base.data(), sizeof(T) * static_cast<std::size_t>(base.numel()));
  for (int b = 0; b < B; ++b)
    for (int g = 0; g < G; ++g)
      std::memcpy(out.data() + (std::int64_t(b) * S + idx[b][g]) * D,
                  rows.data() + (std::int64_t(b) * G + g) * D, sizeof(T) * D);
  attach(out, {base.impl(), rows.impl()},
         [bi = base.impl(), ri = rows.impl(), oi = out.impl(), idx, B, S, G, D] {
           if (bi->grad) {
             // overwritten positions contribute nothing to base
             std::vector<T> g(oi->grad, oi->grad + oi->numel);
             for (int b = 0; b < B; ++b)
               for (int gg = 0; gg < G; ++gg)
                 std::fill_n(g.data() + (std::int64_t(b) * S + idx[b][gg]) * D, D, T(0));
             for (std::int64_t i = 0; i < oi->numel; ++i) bi->grad[i] += g[static_cast<std::size_t>(i)];
           }
           if (ri->grad)
             for (int b = 0; b < B; ++b)
               for (int gg = 0; gg < G; ++gg) {
                 const T* src = oi->grad + (std::int64_t(b) * S + idx[b][gg]) * D;
                 T* dst = ri->grad + (std::int64_t(b) * G + gg) * D;
                 for (int i = 0; i < D; ++i) dst[i] += src[i];
               }
         });
  return out;
}

template <typename T>
Tensor<T> split_heads(const Tensor<T>& x, int heads) {
  req_defined(x, "split_heads");
  req(x.shape().size() == 3, "split_heads: expects [B,S,D], got " + shape_str(x.shape()));
  const int B = x.dim(0), S = x.dim(1), D = x.dim(2);
  req(heads > 0 && D % heads == 0,
      "split_heads: width " + std::to_string(D) + " not divisible by " + std::to_string(heads));
  const int Dh = D / heads;
  auto out = Tensor<T>::zeros({B, heads, S, Dh});
  for (int b = 0; b < B; ++b)
    for (int s = 0; s < S; ++s)
      for (int h = 0; h < heads; ++h)
        std::memcpy(out.data() + (((std::int64_t(b) * heads + h) * S + s)) * Dh,
                    x.data() + (std::int64_t(b) * S + s) * D + std::int64_t(h) * Dh,
                    sizeof(T) * Dh);
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), B, S, D, heads, Dh] {
    if (!xi->grad) return;
    for (int b = 0; b < B; ++b)
      for (int s = 0; s < S; ++s)
        for (int h = 0; h < heads; ++h) {
          T* dst = xi->grad + (std::int64_t(b) * S + s) * D + std::int64_t(h) * Dh;
          const T* src = oi->grad + ((std::int64_t(b) * heads + h) * S + s) * Dh;
          for (int i = 0; i < Dh; ++i) dst[i] += src[i];
        }
  });
  return out;
}

template <typename T>
Tensor<T> merge_heads(const Tensor<T>& x) {
  req_defined(x, "merge_heads");
  req(x.shape().size() == 4, "merge_heads: expects [B,H,S,Dh], got " + shape_str(x.shape()));
  const int B = x.dim(0), H = x.dim(1), S = x.dim(2), Dh = x.dim(3);
  const int D = H * Dh;
  auto out = Tensor<T>::zeros({B, S, D});
  for (int b = 0; b < B; ++b)
    for (int h = 0; h < H; ++h)
      for (int s = 0; s < S; ++s)
        std::memcpy(out.data() + (std::int64_t(b) * S + s) * D + std::int64_t(h) * Dh,
                    x.data() + ((std::int64_t(b) * H + h) * S + s) * Dh, sizeof(T) * Dh);
  attach(out, {x.impl()}, [xi = x.impl(), oi = out.impl(), B, H, S, Dh, D] {
    if (!xi->grad) return;
    for (int b = 0; b < B; ++b)
      for (int h = 0; h < H; ++h)
        for (int s = 0; s < S; ++s) {
          T* dst = xi->grad + ((std::int64_t(b) * H + h) * S + s) * Dh;
          const T* src = oi->grad + (std::int64_t(b) * S + s) * D + std::int64_t(h) * Dh;
          for (int i = 0; i < Dh; ++i) dst[i] += src[i];
        }
  });
  return out;
}

template <typename T>
std::vector<int> argmax_last(const Tensor<T>& x) {
  req_defined(x, "argmax_last");
  req(!x.shape().empty(), "argmax_last: rank-0 input");
  const int d = x.dim(-1);
  const std::int64_t rows = x.numel() / d;
  std::vector<int> out(static_cast<std::size_t>(rows));
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * d;
    int best = 0;
    for (int i = 1; i < d; ++i)
      if (xr[i] > xr[best]) best = i;
    out[static_cast<std::size_t>(r)] = best;
  }
  return out;
}

#define HARMON_INSTANTIATE_OPS(T)                                                              \
  template void check_finite<T>(const Tensor<T>&, const char*);                                \
  template Tensor<T> matmul<T>(const Tensor<T>&, const Tensor<T>&);                            \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);          \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> scale<T>(const Tensor<T>&, T);                                            \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                \
  template Tensor<T> softmax<T>(const Tensor<T>&);                                             \
  template Tensor<T> layernorm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> embedding<T>(const Tensor<T>&, const std::vector<int>&);                  \
  template Tensor<T> sdpa<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,             \
                             const Tensor<T>&);                                                \
  template Tensor<T> cross_entropy<T>(const Tensor<T>&, const std::vector<int>&,               \
                                      const std::vector<T>&);                                  \
  template Tensor<T> mse<T>(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> reshape<T>(const Tensor<T>&, const Shape&);                               \
  template Tensor<T> broadcast_to<T>(const Tensor<T>&, const Shape&);                          \
  template Tensor<T> concat_seq<T>(const Tensor<T>&, const Tensor<T>&);                        \
  template Tensor<T> slice_seq<T>(const Tensor<T>&, int, int);                                 \
  template Tensor<T> concat_last<T>(const Tensor<T>&, const Tensor<T>&);                       \
  template Tensor<T> gather_seq<T>(const Tensor<T>&, const std::vector<std::vector<int>>&);    \
  template Tensor<T> scatter_seq<T>(const Tensor<T>&, const std::vector<std::vector<int>>&,    \
                                    const Tensor<T>&);                                         \
  template Tensor<T> split_heads<T>(const Tensor<T>&, int);                                    \
  template Tensor<T> merge_heads<T>(const Tensor<T>&);                                         \
  template std::vector<int> argmax_last<T>(const Tensor<T>&);

HARMON_INSTANTIATE_OPS(float)
HARMON_INSTANTIATE_OPS(double)

#undef HARMON_INSTANTIATE_OPS

}  // namespace harmon::num
