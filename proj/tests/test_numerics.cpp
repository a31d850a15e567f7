#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>

#include "harmon/numerics/checkpoint.hpp"
#include "harmon/numerics/grad_check.hpp"
#include "harmon/numerics/ops.hpp"
#include "harmon/numerics/optim.hpp"
#include "harmon/numerics/param_store.hpp"
#include "harmon/numerics/rng.hpp"
#include "harmon/numerics/tensor.hpp"
#include "harmon/numerics/threading.hpp"

using namespace harmon;
using namespace harmon::num;

namespace {

Tensor<double> param_normal(ParamStore<double>& store, const std::string& name, const Shape& shape,
                            Rng& rng, double stddev = 0.5) {
  auto& p = store.add(name, shape, "g");
  rng.fill_normal(p.value, 0.0, stddev);
  return store.tensor(name);
}

Tensor<double> rand_const(const Shape& shape, Rng& rng, double stddev = 0.5) {
  std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
  rng.fill_normal(v, 0.0, stddev);
  return Tensor<double>::from_data(shape, std::move(v));
}

double run_check(const std::function<Tensor<double>()>& fn, ParamStore<double>& store) {
  GradCheckOptions opt;
  opt.samples_per_param = 6;
  return grad_check<double>(fn, store, opt).max_rel_err;
}

}  // namespace

TEST_CASE("rng: determinism, restore, splitting") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42);
  for (int i = 0; i < 7; ++i) c.next_u64();
  Rng d = Rng::restore(c.key(), c.counter());
  for (int i = 0; i < 50; ++i) CHECK(c.next_u64() == d.next_u64());

  Rng root(7);
  Rng s1 = root.split(1), s2 = root.split(2), s1b = root.split(1);
  CHECK(s1.next_u64() == s1b.next_u64());
  CHECK(s1.next_u64() != s2.next_u64());
  // splitting leaves the parent untouched
  Rng root2(7);
  (void)root2.split(99);
  Rng root3(7);
  CHECK(root2.next_u64() == root3.next_u64());
}

TEST_CASE("rng: uniform and normal moments") {
  Rng rng(123);
  const int n = 100000;
  double sum = 0;
  for (int i = 0; i < n; ++i) {
    double u = rng.next_uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.005);  // 4-sigma band for n=1e5

  double m = 0, m2 = 0;
  for (int i = 0; i < n; ++i) {
    double z = rng.next_normal();
    m += z;
    m2 += z * z;
  }
  m /= n;
  m2 /= n;
  CHECK(std::abs(m) < 0.02);
  CHECK(std::abs(m2 - m * m - 1.0) < 0.03);
}

TEST_CASE("tensor: shape checks and finite guard") {
  CHECK_THROWS_AS((void)Tensor<float>::from_data({2, 2}, {1, 2, 3}), ShapeError);
  CHECK_THROWS_AS((void)shape_numel({2, 0}), ShapeError);

  auto bad = Tensor<float>::from_data({2}, {1.0f, std::nanf("")});
  auto ok = Tensor<float>::from_data({2}, {1.0f, 2.0f});
  CHECK_THROWS_AS((void)add(bad, ok), NumericsError);
  set_finite_checks(false);
  CHECK_NOTHROW((void)add(bad, ok));
  set_finite_checks(true);

  auto a = Tensor<float>::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = Tensor<float>::from_data({3, 3}, std::vector<float>(9, 0.f));
  CHECK_THROWS_AS((void)add(a, b), ShapeError);
  CHECK_THROWS_AS((void)matmul(a, a), ShapeError);
}

TEST_CASE("softmax of equal logits is uniform") {
  auto x = Tensor<float>::full({2, 5}, 3.25f);
  auto y = softmax(x);
  for (int i = 0; i < 10; ++i) CHECK(y.data()[i] == doctest::Approx(0.2f).epsilon(1e-6));
}

TEST_CASE("attention with a single key/value returns that value row") {
  Rng rng(5);
  auto q = rand_const({1, 2, 3, 4}, rng);
  auto k = rand_const({1, 2, 1, 4}, rng);
  auto v = rand_const({1, 2, 1, 4}, rng);
  auto o = sdpa(q, k, v, Tensor<double>{});
  for (int h = 0; h < 2; ++h)
    for (int s = 0; s < 3; ++s)
      for (int d = 0; d < 4; ++d)
        CHECK(o.data()[(h * 3 + s) * 4 + d] == doctest::Approx(v.data()[h * 4 + d]));
}

TEST_CASE("linear map gradient equals the input exactly") {
  ParamStore<double> store;
  auto& w = store.add("w", {3, 1}, "g");
  w.value = {0.2, -0.4, 0.7};
  auto x = Tensor<double>::from_data({1, 3}, {1.5, -2.0, 0.25});
  auto wt = store.tensor("w");
  auto y = matmul(x, wt);
  backward(y);
  for (int i = 0; i < 3; ++i) CHECK(store.at("w").grad[static_cast<std::size_t>(i)] == x.data()[i]);
}

TEST_CASE("matmul backward matches central differences on 3x4 * 4x2") {
  ParamStore<double> store;
  Rng rng(11);
  auto a = param_normal(store, "a", {3, 4}, rng);
  auto b = param_normal(store, "b", {4, 2}, rng);
  auto target = rand_const({3, 2}, rng);
  GradCheckOptions opt;
  opt.samples_per_param = 24;  // every element of both operands
  auto report = grad_check<double>(
      [&] { return mse(matmul(store.tensor("a"), store.tensor("b")), target); }, store, opt);
  CHECK(report.max_rel_err < 1e-6);
}

TEST_CASE("cross-entropy gradient, 5 random classes") {
  ParamStore<double> store;
  Rng rng(17);
  (void)param_normal(store, "logits", {6, 5}, rng, 1.0);
  std::vector<int> targets = {0, 3, 2, 4, 1, 2};
  std::vector<double> weights = {1, 0, 1, 0.5, 1, 1};
  auto report = grad_check<double>(
      [&] { return cross_entropy(store.tensor("logits"), targets, weights); }, store,
      GradCheckOptions{.eps = 1e-5, .samples_per_param = 30});
  CHECK(report.max_rel_err < 1e-5);
}

TEST_CASE("every differentiable op passes finite-difference checks across seeds") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    CAPTURE(seed);
    Rng rng(seed * 7919 + 13);
    const int m = static_cast<int>(rng.next_int(1, 4));
    const int k = static_cast<int>(rng.next_int(1, 4));
    const int n = static_cast<int>(rng.next_int(1, 4));

    {
      ParamStore<double> s;
      (void)param_normal(s, "a", {m, k}, rng);
      (void)param_normal(s, "b", {k, n}, rng);
      auto t = rand_const({m, n}, rng);
      CHECK(run_check([&] { return mse(matmul(s.tensor("a"), s.tensor("b")), t); }, s) < 1e-5);
    }
    {
      ParamStore<double> s;
      (void)param_normal(s, "x", {m, n, k}, rng);
      (void)param_normal(s, "w", {k, n}, rng);
      (void)param_normal(s, "b", {n}, rng);
      auto t = rand_const({m, n, n}, rng);
      CHECK(run_check(
                [&] { return mse(linear(s.tensor("x"), s.tensor("w"), s.tensor("b")), t); }, s) <
            1e-5);
    }
    {
      ParamStore<double> s;
      (void)param_normal(s, "a", {m, k, n}, rng);
      (void)param_normal(s, "b", {k, n}, rng);  // broadcast over the leading dim
      auto t = rand_const({m, k, n}, rng);
      auto t2 = rand_const({k, n}, rng);
      CHECK(run_check([&] { return mse(add(s.tensor("a"), s.tensor("b")), t); }, s) < 1e-5);
      CHECK(run_check([&] { return mse(mul(s.tensor("b"), s.tensor("b")), t2); }, s) < 1e-5);
      CHECK(run_check([&] { return mse(scale(s.tensor("a"), 1.7), t); }, s) < 1e-5);
      CHECK(run_check(
                [&] {
                  return mse(sub(s.tensor("a"), broadcast_to(s.tensor("b"), {m, k, n})), t);
                },
                s) < 1e-5);
    }
    {
      ParamStore<double> s;
      (void)param_normal(s, "x", {m, k}, rng, 1.0);
      auto t = rand_const({m, k}, rng);
      CHECK(run_check([&] { return mse(gelu(s.tensor("x")), t); }, s) < 1e-5);
      CHECK(run_check([&] { return mse(softmax(s.tensor("x")), t); }, s) < 1e-5);
    }
    {
      const int d = 4 + static_cast<int>(rng.next_int(0, 3));
      ParamStore<double> s;
      (void)param_normal(s, "x", {m, d}, rng, 1.0);
      (void)param_normal(s, "g", {d}, rng, 0.3);
      (void)param_normal(s, "b", {d}, rng, 0.3);
      auto t = rand_const({m, d}, rng);
      CHECK(run_check(
                [&] {
                  return mse(layernorm(s.tensor("x"), s.tensor("g"), s.tensor("b"), 1e-5), t);
                },
                s) < 1e-5);
    }
    {
      const int V = 5, D = 3;
      ParamStore<double> s;
      (void)param_normal(s, "tab", {V, D}, rng);
      std::vector<int> ids = {1, 4, 1, 0};  // repeats exercise grad accumulation
      auto t = rand_const({4, D}, rng);
      CHECK(run_check([&] { return mse(embedding(s.tensor("tab"), ids), t); }, s) < 1e-5);
    }
    {
      const int B = static_cast<int>(rng.next_int(1, 2));
      const int H = static_cast<int>(rng.next_int(1, 2));
      const int Sq = static_cast<int>(rng.next_int(1, 3));
      const int Sk = static_cast<int>(rng.next_int(1, 3));
      const int Dh = static_cast<int>(rng.next_int(2, 4));
      ParamStore<double> s;
      (void)param_normal(s, "q", {B, H, Sq, Dh}, rng);
      (void)param_normal(s, "k", {B, H, Sk, Dh}, rng);
      (void)param_normal(s, "v", {B, H, Sk, Dh}, rng);
      const double ninf = -std::numeric_limits<double>::infinity();
      std::vector<double> mv(static_cast<std::size_t>(B) * Sq * Sk, 0.0);
      for (int b = 0; b < B; ++b)
        for (int i = 0; i < Sq; ++i)
          for (int j = 1; j < Sk; ++j)
            if (rng.next_uniform() < 0.4) mv[(b * Sq + i) * Sk + j] = ninf;  // col 0 stays open
      auto mask = Tensor<double>::from_data({B, Sq, Sk}, std::move(mv));
      auto t = rand_const({B, H, Sq, Dh}, rng);
      CHECK(run_check(
                [&] { return mse(sdpa(s.tensor("q"), s.tensor("k"), s.tensor("v"), mask), t); },
                s) < 1e-5);
    }
    {
      const int B = 2, S = 4, D = 3;
      ParamStore<double> s;
      (void)param_normal(s, "x", {B, S, D}, rng);
      (void)param_normal(s, "rows", {B, 2, D}, rng);
      std::vector<std::vector<int>> gidx = {{0, 2, 2}, {3, 1, 0}};
      std::vector<std::vector<int>> sidx = {{1, 3}, {0, 2}};
      auto t1 = rand_const({B, 3, D}, rng);
      auto t2 = rand_const({B, S, D}, rng);
      auto t3 = rand_const({B, 2 * S, D}, rng);
      auto t4 = rand_const({B, 2, D}, rng);
      auto t5 = rand_const({B, S, 2 * D}, rng);
      CHECK(run_check([&] { return mse(gather_seq(s.tensor("x"), gidx), t1); }, s) < 1e-5);
      CHECK(run_check(
                [&] { return mse(scatter_seq(s.tensor("x"), sidx, s.tensor("rows")), t2); }, s) <
            1e-5);
      CHECK(run_check([&] { return mse(concat_seq(s.tensor("x"), s.tensor("x")), t3); }, s) < 1e-5);
      CHECK(run_check([&] { return mse(slice_seq(s.tensor("x"), 1, 2), t4); }, s) < 1e-5);
      CHECK(run_check([&] { return mse(concat_last(s.tensor("x"), s.tensor("x")), t5); }, s) <
            1e-5);
      CHECK(run_check(
                [&] {
                  return mse(merge_heads(split_heads(reshape(s.tensor("x"), {B, S, D}), 3)), t2);
                },
                s) < 1e-5);
    }
  }
}

TEST_CASE("gradients accumulate across backward calls until zeroed") {
  ParamStore<double> store;
  auto& w = store.add("w", {2}, "g");
  w.value = {1.0, 2.0};
  auto target = Tensor<double>::from_data({2}, {0.0, 0.0});
  auto loss1 = mse(store.tensor("w"), target);
  backward(loss1);
  std::vector<double> g1 = store.at("w").grad;
  auto loss2 = mse(store.tensor("w"), target);
  backward(loss2);
  for (int i = 0; i < 2; ++i)
    CHECK(store.at("w").grad[static_cast<std::size_t>(i)] == doctest::Approx(2 * g1[static_cast<std::size_t>(i)]));
  store.zero_grads();
  CHECK(store.at("w").grad[0] == 0.0);
}

TEST_CASE("no-grad mode records nothing") {
  ParamStore<double> store;
  store.add("w", {2}, "g").value = {1.0, 2.0};
  NoGradGuard ng;
  auto y = scale(store.tensor("w"), 2.0);
  CHECK_FALSE(y.requires_grad());
  CHECK(y.impl()->node == nullptr);
  CHECK(store.at("w").grad.empty());
}

TEST_CASE("adamw: frozen params, zero lr, hand-computed first step, decay") {
  SUBCASE("lr = 0 leaves parameters unchanged") {
    ParamStore<float> s;
    s.add("w", {3}, "g").value = {1.f, -2.f, 3.f};
    auto t = s.tensor("w");
    backward(mse(t, Tensor<float>::zeros({3})));
    OptimizerState<float> st;
    st.lr = 0.0;
    adamw_step(s, st);
    CHECK(s.at("w").value == std::vector<float>{1.f, -2.f, 3.f});
    CHECK(st.step == 1);
  }
  SUBCASE("bias-corrected first step moves 1.0 to ~0.9") {
    ParamStore<float> s;
    s.add("w", {1}, "g").value = {1.f};
    auto t = s.tensor("w");
    s.at("w").grad = {1.f};
    OptimizerState<float> st;
    st.lr = 0.1;
    st.beta1 = 0.9;
    st.beta2 = 0.999;
    st.weight_decay = 0.0;
    adamw_step(s, st);
    CHECK(s.at("w").value[0] == doctest::Approx(0.9f).epsilon(1e-5));
  }
  SUBCASE("pure decay shrinks by (1 - lr*wd)") {
    ParamStore<float> s;
    s.add("w", {1}, "g").value = {2.f};
    (void)s.tensor("w");  // materializes a zero grad
    OptimizerState<float> st;
    st.lr = 0.1;
    st.weight_decay = 0.1;
    adamw_step(s, st);
    CHECK(s.at("w").value[0] == doctest::Approx(2.f * 0.99f).epsilon(1e-6));
  }
  SUBCASE("missing gradient on a trainable param") {
    ParamStore<float> s;
    s.add("w", {1}, "g").value = {1.f};
    OptimizerState<float> st;
    CHECK_THROWS_AS(adamw_step(s, st), OptimError);
  }
  SUBCASE("frozen params byte-identical across 100 steps") {
    ParamStore<float> s;
    Rng rng(3);
    s.add_normal("frozen", {16}, "llm", rng, 0.5);
    s.add_normal("live", {16}, "enc", rng, 0.5);
    s.set_trainable_group("llm", false);
    std::vector<float> before = s.at("frozen").value;
    OptimizerState<float> st;
    st.lr = 0.01;
    st.weight_decay = 0.1;
    for (int i = 0; i < 100; ++i) {
      s.zero_grads();
      backward(mse(s.tensor("live"), Tensor<float>::full({16}, 3.f)));
      adamw_step(s, st);
    }
    CHECK(std::memcmp(before.data(), s.at("frozen").value.data(), sizeof(float) * 16) == 0);
    CHECK(s.at("live").value[0] != doctest::Approx(0.f));
  }
  SUBCASE("per-group learning rates") {
    ParamStore<float> s;
    s.add("a", {1}, "decoder").value = {1.f};
    s.add("b", {1}, "encoder").value = {1.f};
    s.at("a").grad = {1.f};
    s.at("b").grad = {1.f};
    (void)s.tensor("a");
    (void)s.tensor("b");
    s.at("a").grad = {1.f};
    s.at("b").grad = {1.f};
    OptimizerState<float> st;
    st.lr = 1e-3;
    st.group_lr = {{"decoder", 0.0}};
    adamw_step(s, st);
    CHECK(s.at("a").value[0] == 1.f);
    CHECK(s.at("b").value[0] < 1.f);
  }
}

TEST_CASE("grad_check rejects bad eps and non-finite losses") {
  ParamStore<double> s;
  s.add("w", {1}, "g").value = {1.0};
  auto fn = [&] { return mse(s.tensor("w"), Tensor<double>::zeros({1})); };
  CHECK_THROWS_AS((void)grad_check<double>(fn, s, GradCheckOptions{.eps = 1e-2}), ConfigError);
  auto bad = [&] {
    return Tensor<double>::from_data({1}, {std::numeric_limits<double>::quiet_NaN()});
  };
  set_finite_checks(false);  // let the NaN reach the harness itself
  CHECK_THROWS_AS((void)grad_check<double>(bad, s), NumericsError);
  set_finite_checks(true);
}

TEST_CASE("training loop is bit-deterministic across runs") {
  auto run = [] {
    set_num_threads(1);
    ParamStore<float> s;
    Rng init(99);
    s.add_normal("w1", {4, 8}, "g", init, 0.2);
    s.add_normal("b1", {8}, "g", init, 0.0);
    s.add_normal("w2", {8, 3}, "g", init, 0.2);
    Rng data(7);
    std::vector<float> xv(8 * 4);
    data.fill_normal(xv, 0.0, 1.0);
    auto x = Tensor<float>::from_data({8, 4}, xv);
    std::vector<int> targets;
    for (int i = 0; i < 8; ++i) targets.push_back(static_cast<int>(data.next_int(0, 2)));
    OptimizerState<float> st;
    st.lr = 1e-2;
    std::vector<float> losses;
    for (int step = 0; step < 10; ++step) {
      s.zero_grads();
      auto h = gelu(linear(x, s.tensor("w1"), s.tensor("b1")));
      auto logits = linear(h, s.tensor("w2"), Tensor<float>{});
      auto loss = cross_entropy(logits, targets, {});
      backward(loss);
      adamw_step(s, st);
      losses.push_back(loss.item());
    }
    return losses;
  };
  auto l1 = run();
  auto l2 = run();
  CHECK(std::memcmp(l1.data(), l2.data(), l1.size() * sizeof(float)) == 0);
  CHECK(l1.back() < l1.front());
}

TEST_CASE("checkpoint round-trips params and optimizer state") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "harmon_ckpt_test.bin").string();

  ParamStore<float> s;
  Rng rng(21);
  s.add_normal("enc.w", {4, 4}, "encoder", rng, 0.3);
  s.add_normal("llm.w", {2, 6}, "llm", rng, 0.3);
  s.set_trainable_group("llm", false);
  (void)s.tensor("enc.w");
  backward(mse(s.tensor("enc.w"), Tensor<float>::zeros({4, 4})));
  OptimizerState<float> st;
  st.lr = 5e-3;
  st.group_lr = {{"encoder", 1e-2}};
  adamw_step(s, st);

  CheckpointData out;
  pack_params(s, out);
  pack_optim(st, out);
  out.meta["note"] = "roundtrip";
  save_checkpoint(path, out);

  auto in = load_checkpoint(path);
  CHECK(in.meta.at("note") == "roundtrip");

  ParamStore<float> s2;
  s2.add("enc.w", {4, 4}, "encoder");
  s2.add("llm.w", {2, 6}, "llm");
  unpack_params(in, s2);
  CHECK(std::memcmp(s2.at("enc.w").value.data(), s.at("enc.w").value.data(),
                    sizeof(float) * 16) == 0);
  CHECK(std::memcmp(s2.at("llm.w").value.data(), s.at("llm.w").value.data(),
                    sizeof(float) * 12) == 0);
  CHECK_FALSE(s2.at("llm.w").trainable);
  CHECK(s2.at("enc.w").trainable);

  OptimizerState<float> st2;
  unpack_optim(in, st2);
  CHECK(st2.step == 1);
  CHECK(st2.lr == 5e-3);
  CHECK(st2.group_lr.at("encoder") == 1e-2);
  CHECK(std::memcmp(st2.slots.at("enc.w").m.data(), st.slots.at("enc.w").m.data(),
                    sizeof(float) * 16) == 0);

  SUBCASE("mismatched shape is rejected") {
    ParamStore<float> s3;
    s3.add("enc.w", {2, 8}, "encoder");
    s3.add("llm.w", {2, 6}, "llm");
    CHECK_THROWS_AS(unpack_params(in, s3), CheckpointError);
  }
  SUBCASE("bad magic is rejected") {
    const std::string bad = (fs::temp_directory_path() / "harmon_ckpt_bad.bin").string();
    std::ofstream os(bad, std::ios::binary);
    os << "NOPE1234";
    os.close();
    CHECK_THROWS_AS((void)load_checkpoint(bad), CheckpointError);
    fs::remove(bad);
  }
  fs::remove(path);
}

TEST_CASE("param init is independent of registration order") {
  Rng init(55);
  ParamStore<float> a, b;
  a.add_normal("x", {8}, "g", init, 0.1);
  a.add_normal("y", {8}, "g", init, 0.1);
  b.add_normal("y", {8}, "g", init, 0.1);
  b.add_normal("x", {8}, "g", init, 0.1);
  CHECK(a.at("x").value == b.at("x").value);
  CHECK(a.at("y").value == b.at("y").value);
}
