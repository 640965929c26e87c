#include "doctest.h"
#include "oracles.hpp"
#include "kernels.hpp"
#include "tape.hpp"

using namespace backlink;
using T2 = Tensor<double>;

namespace {

Seed<double> seed_of(Var v, T2 e) { return {v, std::move(e)}; }

double dot(const T2& a, const T2& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("tensor shape and element count agree") {
  CHECK_THROWS_AS(T2({2, 3}, std::vector<double>(5)), DimensionError);
  T2 t({2, 3, 4});
  CHECK(t.size() == 24);
  CHECK(t.reshaped({6, 4}).dim(0) == 6);
  CHECK_THROWS_AS(t.reshaped({5, 5}), DimensionError);
}

TEST_CASE("matmul examples") {
  Tape<double> tape;
  Var a = input(tape, T2::from({1, 2}, {1, 2}));
  Var b = input(tape, T2::from({2, 1}, {3, 4}));
  Var c = matmul(tape, a, b);
  CHECK(tape.value(c).shape() == Shape{1, 1});
  CHECK(tape.value(c)[0] == 11.0);

  Var eye = input(tape, T2::from({2, 2}, {1, 0, 0, 1}));
  Var m = input(tape, T2::from({2, 2}, {1, 2, 3, 4}));
  const auto& p = tape.value(matmul(tape, eye, m));
  for (std::size_t i = 0; i < 4; ++i) CHECK(p[i] == tape.value(m)[i]);

  Var z = input(tape, T2({2, 3}));
  Var any = input(tape, oracle::random_tensor({3, 2}, 5));
  CHECK(max_abs(tape.value(matmul(tape, z, any))) == 0.0);
}

TEST_CASE("matmul shape mismatch names both shapes") {
  Tape<double> tape;
  Var a = input(tape, T2({2, 3}));
  Var b = input(tape, T2({2, 3}));
  try {
    matmul(tape, a, b);
    FAIL("expected a dimension error");
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    CHECK(msg.find(shape_string({2, 3})) != std::string::npos);
  }
}

TEST_CASE("gemm matches a naive triple loop for every transpose combination") {
  const std::size_t m = 5, n = 4, k = 3;
  for (bool ta : {false, true})
    for (bool tb : {false, true}) {
      T2 a = oracle::random_tensor(ta ? Shape{k, m} : Shape{m, k}, 1);
      T2 b = oracle::random_tensor(tb ? Shape{n, k} : Shape{k, n}, 2);
      T2 c = oracle::random_tensor({m, n}, 3);
      T2 expect = c;
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          double s = 0;
          for (std::size_t q = 0; q < k; ++q) s += (ta ? a[q * m + i] : a[i * k + q]) * (tb ? b[j * k + q] : b[q * n + j]);
          expect[i * n + j] = 2.0 * s + 0.5 * c[i * n + j];
        }
      kernels::gemm<double>(ta, tb, m, n, k, 2.0, a.data(), b.data(), 0.5, c.data());
      CHECK(max_abs_diff(c, expect) <= 1e-12);
    }
}

TEST_CASE("conv2d examples") {
  Tape<double> tape;
  Var x = input(tape, T2({1, 1, 3, 3}, 1.0));
  Var ones = input(tape, T2({1, 1, 3, 3}, 1.0));
  const auto& y = tape.value(conv2d(tape, x, ones, 1, 1));
  const std::vector<double> expect{4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::size_t i = 0; i < 9; ++i) CHECK(y[i] == expect[i]);

  T2 center({1, 1, 3, 3});
  center[4] = 1.0;
  Var c = input(tape, center);
  const auto& same = tape.value(conv2d(tape, x, c, 1, 1));
  for (std::size_t i = 0; i < 9; ++i) CHECK(same[i] == 1.0);

  Var zero = input(tape, T2({1, 1, 3, 3}));
  CHECK(max_abs(tape.value(conv2d(tape, zero, ones, 1, 1))) == 0.0);
}

TEST_CASE("conv2d rejects channel mismatch and empty output") {
  Tape<double> tape;
  Var x = input(tape, T2({1, 2, 3, 3}));
  Var w = input(tape, T2({1, 3, 3, 3}));
  CHECK_THROWS_AS(conv2d(tape, x, w, 1, 1), DimensionError);
  Var small = input(tape, T2({1, 3, 1, 1}));
  CHECK_THROWS_AS(conv2d(tape, small, w, 1, 0), DimensionError);
}

TEST_CASE("im2col and direct convolution agree with the brute-force oracle") {
  for (std::size_t stride : {1u, 2u})
    for (std::size_t pad : {0u, 1u}) {
      T2 xv = oracle::random_tensor({2, 3, 7, 6}, 10 + stride);
      T2 wv = oracle::random_tensor({4, 3, 3, 3}, 20 + pad);
      const T2 ref = oracle::naive_conv(xv, wv, stride, pad);
      Tape<double> tape;
      Var x = input(tape, xv), w = input(tape, wv);
      Var a = conv2d(tape, x, w, stride, pad, ConvAlgo::Im2col);
      Var b = conv2d(tape, x, w, stride, pad, ConvAlgo::Direct);
      CHECK(max_abs_diff(tape.value(a), ref) <= 1e-6);
      CHECK(max_abs_diff(tape.value(b), ref) <= 1e-6);

      // Backward of both algorithms against the oracle's finite differences.
      const T2 e = oracle::random_tensor(tape.value(a).shape(), 30);
      for (Var out : {a, b}) {
        const std::vector<Seed<double>> seeds{seed_of(out, e)};
        const auto adj = tape.backward(seeds, nullptr);
        const auto fd_x = oracle::central_diff(xv, [&] { return dot(oracle::naive_conv(xv, wv, stride, pad), e); });
        const auto fd_w = oracle::central_diff(wv, [&] { return dot(oracle::naive_conv(xv, wv, stride, pad), e); });
        for (std::size_t i = 0; i < xv.size(); ++i) CHECK(oracle::rel_err(adj.at(x)[i], fd_x[i]) <= 1e-6);
        for (std::size_t i = 0; i < wv.size(); ++i) CHECK(oracle::rel_err(adj.at(w)[i], fd_w[i]) <= 1e-6);
      }
    }
}

TEST_CASE("linear layer gradients") {
  Parameter<double> w{"w", T2::from({1, 1}, {2})};
  Tape<double> tape;
  Var x = input(tape, T2::from({1, 1}, {3}));
  Var y = matmul(tape, x, transpose(tape, param(tape, w)));
  CHECK(tape.value(y)[0] == 6.0);
  GradMap<double> grads;
  const std::vector<Seed<double>> seeds{seed_of(y, T2::from({1, 1}, {1}))};
  const auto adj = tape.backward(seeds, &grads);
  CHECK(grads.at(&w)[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(adj.at(x)[0] == doctest::Approx(2.0).epsilon(1e-12));
}

TEST_CASE("inactive relu blocks the error") {
  Tape<double> tape;
  Var z = input(tape, T2::from({1, 1}, {-1}));
  Var r = relu(tape, z);
  const std::vector<Seed<double>> seeds{seed_of(r, T2::from({1, 1}, {5}))};
  const auto adj = tape.backward(seeds, nullptr);
  CHECK(adj.get_or_zero(z, {1, 1})[0] == 0.0);
}

TEST_CASE("relu forward") {
  Tape<double> tape;
  const auto& r = tape.value(relu(tape, input(tape, T2::from({1, 3}, {-1, 2, 0}))));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 2.0);
  CHECK(r[2] == 0.0);
}

TEST_CASE("scale_grad and stop_grad") {
  const T2 delta = T2::from({1, 2}, {0.4, -0.2});
  for (double s : {1.0, 0.5, 0.0}) {
    Tape<double> tape;
    Var x = input(tape, T2::from({1, 2}, {1.5, -3}));
    Var y = scale_grad(tape, x, s);
    CHECK(max_abs_diff(tape.value(y), tape.value(x)) == 0.0);
    const std::vector<Seed<double>> seeds{seed_of(y, delta)};
    const auto g = tape.backward(seeds, nullptr).get_or_zero(x, {1, 2});
    CHECK(g[0] == doctest::Approx(s * 0.4).epsilon(1e-15));
    CHECK(g[1] == doctest::Approx(s * -0.2).epsilon(1e-15));
  }
  {
    Tape<double> tape;
    Var x = input(tape, T2::from({1, 2}, {1.5, -3}));
    Var y = scale_grad(tape, x, 0.5);
    const auto g = tape.backward(std::vector<Seed<double>>{seed_of(y, delta)}, nullptr).get_or_zero(x, {1, 2});
    CHECK(g[0] == 0.2);
    CHECK(g[1] == -0.1);
  }
  {
    Tape<double> tape;
    Var x = input(tape, T2::from({1, 2}, {1.5, -3}));
    Var y = stop_grad(tape, scale_grad(tape, x, 0.5));
    CHECK(max_abs_diff(tape.value(y), tape.value(x)) == 0.0);
    const auto adj = tape.backward(std::vector<Seed<double>>{seed_of(y, delta)}, nullptr);
    CHECK(max_abs(adj.get_or_zero(x, {1, 2})) == 0.0);
  }
  Tape<double> tape;
  Var x = input(tape, T2({1, 2}));
  CHECK_THROWS_AS(scale_grad(tape, x, 1.5), ConfigError);
  CHECK_THROWS_AS(scale_grad(tape, x, -0.1), ConfigError);
}

TEST_CASE("barrier stops upstream error but downstream parameters still get gradients") {
  Parameter<double> w{"w", T2::from({2, 2}, {1, 2, 3, 4})};
  Parameter<double> v{"v", T2::from({2, 2}, {1, 0, 0, 1})};
  Tape<double> tape;
  Var x = input(tape, T2::from({1, 2}, {1, -1}));
  Var h = matmul(tape, x, param(tape, v));
  Var cut = stop_grad(tape, h);
  Var y = matmul(tape, cut, param(tape, w));
  GradMap<double> grads;
  const auto adj = tape.backward(std::vector<Seed<double>>{seed_of(y, T2::from({1, 2}, {1, 1}))}, &grads);
  CHECK(grads.count(&w) == 1);
  CHECK(max_abs(grads.at(&w)) > 0.0);
  CHECK(grads.count(&v) == 0);
  CHECK(max_abs(adj.get_or_zero(x, {1, 2})) == 0.0);
}

TEST_CASE("backward is linear in the seed") {
  Parameter<double> w{"w", oracle::random_tensor({3, 4}, 1)};
  Tape<double> tape;
  Var x = input(tape, oracle::random_tensor({2, 3}, 2));
  Var y = relu(tape, matmul(tape, x, param(tape, w)));
  const T2 e1 = oracle::random_tensor({2, 4}, 3), e2 = oracle::random_tensor({2, 4}, 4);
  GradMap<double> g1, g2, g12;
  tape.backward(std::vector<Seed<double>>{seed_of(y, e1)}, &g1);
  tape.backward(std::vector<Seed<double>>{seed_of(y, e2)}, &g2);
  tape.backward(std::vector<Seed<double>>{seed_of(y, e1 + e2)}, &g12);
  CHECK(max_abs_diff(g12.at(&w), g1.at(&w) + g2.at(&w)) <= 1e-12);
}

TEST_CASE("backward rejects foreign or misshapen seeds") {
  Tape<double> tape;
  Var x = input(tape, T2({1, 2}));
  Var foreign{42};
  CHECK_THROWS_AS(tape.backward(std::vector<Seed<double>>{seed_of(foreign, T2({1, 2}))}, nullptr), DimensionError);
  CHECK_THROWS_AS(tape.backward(std::vector<Seed<double>>{seed_of(x, T2({2, 1}))}, nullptr), DimensionError);
}

TEST_CASE("batch norm, pooling and dropout gradients match finite differences") {
  T2 xv = oracle::random_tensor({3, 2, 4, 4}, 7);
  Parameter<double> gamma{"g", oracle::random_tensor({2}, 8)};
  Parameter<double> beta{"b", oracle::random_tensor({2}, 9)};
  const T2 e = oracle::random_tensor({3, 2, 2, 2}, 10);
  auto run = [&](GradMap<double>* grads, T2* dx) {
    Tape<double> tape;
    Var x = input(tape, xv);
    Var bn = batch_norm_train<double>(tape, x, param(tape, gamma), param(tape, beta), 1e-5);
    Var y = dropout(tape, max_pool2x2(tape, bn), 0.25, 99);
    if (grads) {
      const auto adj = tape.backward(std::vector<Seed<double>>{seed_of(y, e)}, grads);
      *dx = adj.at(x);
    }
    return dot(tape.value(y), e);
  };
  GradMap<double> grads;
  T2 dx;
  run(&grads, &dx);
  auto f = [&] { return run(nullptr, nullptr); };
  const auto fx = oracle::central_diff(xv, f);
  const auto fg = oracle::central_diff(gamma.value, f);
  const auto fb = oracle::central_diff(beta.value, f);
  for (std::size_t i = 0; i < xv.size(); ++i) CHECK(oracle::rel_err(dx[i], fx[i]) <= 1e-5);
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(oracle::rel_err(grads.at(&gamma)[i], fg[i]) <= 1e-6);
    CHECK(oracle::rel_err(grads.at(&beta)[i], fb[i]) <= 1e-6);
  }
}

TEST_CASE("global average pooling and flatten gradients") {
  T2 xv = oracle::random_tensor({2, 3, 3, 3}, 11);
  const T2 e = oracle::random_tensor({2, 3}, 12);
  auto run = [&](T2* dx) {
    Tape<double> tape;
    Var x = input(tape, xv);
    Var y = flatten(tape, avg_pool_global(tape, x));
    if (dx) *dx = tape.backward(std::vector<Seed<double>>{seed_of(y, e)}, nullptr).at(x);
    return dot(tape.value(y), e);
  };
  T2 dx;
  run(&dx);
  const auto fd = oracle::central_diff(xv, [&] { return run(nullptr); });
  for (std::size_t i = 0; i < xv.size(); ++i) CHECK(oracle::rel_err(dx[i], fd[i]) <= 1e-6);
}

TEST_CASE("values stay finite through forward and backward") {
  Tape<double> tape;
  Var x = input(tape, oracle::random_tensor({4, 1, 4, 4}, 1, 1e3));
  Parameter<double> g{"g", T2({1}, 1.0)}, b{"b", T2({1})};
  Var y = batch_norm_train<double>(tape, x, param(tape, g), param(tape, b), 1e-5);
  CHECK(tape.value(y).all_finite());
  GradMap<double> grads;
  const auto adj = tape.backward(std::vector<Seed<double>>{seed_of(y, oracle::random_tensor({4, 1, 4, 4}, 2))}, &grads);
  CHECK(adj.at(x).all_finite());
  CHECK(grads.at(&g).all_finite());
}
