#include "doctest.h"
#include "oracles.hpp"
#include "loss.hpp"
#include "optim.hpp"

#include <cmath>

using namespace backlink;
using T2 = Tensor<double>;

TEST_CASE("cross entropy examples") {
  const std::vector<std::int32_t> zero{0};
  const auto uniform = softmax_xent(T2({1, 10}, 3.7), std::vector<std::int32_t>{4});
  CHECK(std::abs(uniform.loss - std::log(10.0)) <= 1e-9);

  const auto even = softmax_xent(T2::from({1, 2}, {0, 0}), zero);
  CHECK(even.error[0] == doctest::Approx(-0.5).epsilon(1e-15));
  CHECK(even.error[1] == doctest::Approx(0.5).epsilon(1e-15));

  const auto r = softmax_xent(T2::from({1, 2}, {1, 0}), zero);
  // Closed forms: loss = ln(1 + e^-1), p1 = 1 / (1 + e).
  const double loss = std::log1p(std::exp(-1.0)), p1 = 1.0 / (1.0 + std::exp(1.0));
  CHECK(r.loss == doctest::Approx(loss).epsilon(1e-14));
  CHECK(std::abs(r.loss - 0.313262) <= 1e-6);
  CHECK(r.error[0] == doctest::Approx(-p1).epsilon(1e-14));
  CHECK(std::abs(r.error[1] - 0.268941) <= 1e-6);
  CHECK(r.correct == 1);
}

TEST_CASE("cross entropy is stable for large logits and averages over the batch") {
  const auto r = softmax_xent(T2::from({2, 3}, {1000, 0, -1000, 5, 5, 5}), std::vector<std::int32_t>{0, 2});
  CHECK(std::isfinite(r.loss));
  CHECK(r.loss == doctest::Approx(std::log(3.0) / 2).epsilon(1e-12));
  CHECK(r.error.all_finite());
  CHECK(r.error[3] == doctest::Approx(1.0 / 6).epsilon(1e-12));
}

TEST_CASE("cross entropy gradient matches finite differences") {
  T2 logits = oracle::random_tensor({4, 5}, 3);
  const std::vector<std::int32_t> labels{0, 3, 4, 1};
  const auto r = softmax_xent(logits, labels);
  const auto fd = oracle::central_diff(logits, [&] { return softmax_xent(logits, labels).loss; });
  for (std::size_t i = 0; i < fd.size(); ++i) CHECK(oracle::rel_err(r.error[i], fd[i]) <= 1e-7);
}

TEST_CASE("cross entropy rejects bad labels") {
  CHECK_THROWS_AS(softmax_xent(T2({1, 3}), std::vector<std::int32_t>{3}), ConfigError);
  CHECK_THROWS_AS(softmax_xent(T2({1, 3}), std::vector<std::int32_t>{-1}), ConfigError);
  CHECK_THROWS(softmax_xent(T2({2, 3}), std::vector<std::int32_t>{0}));
}

TEST_CASE("sgd examples") {
  {
    Parameter<double> w{"w", T2({1}, 1.0)};
    SgdState<double> opt({&w}, {0.1, 0.0, 0.0});
    GradMap<double> g;
    g[&w] = T2({1}, 0.1);
    opt.step(g);
    CHECK(std::abs(w.value[0] - 0.99) <= 1e-12);
  }
  {
    Parameter<double> w{"w", T2({1}, 1.0)};
    SgdState<double> opt({&w}, {0.1, 0.9, 0.0});
    GradMap<double> g;
    g[&w] = T2({1}, 0.1);
    opt.step(g);
    CHECK(std::abs(opt.velocity()[0][0] - 0.1) <= 1e-12);
    CHECK(std::abs(w.value[0] - 0.99) <= 1e-12);
    opt.step(g);
    CHECK(std::abs(opt.velocity()[0][0] - 0.19) <= 1e-12);
    CHECK(std::abs(w.value[0] - 0.971) <= 1e-12);
  }
  {
    Parameter<double> w{"w", T2({1}, 1.0)};
    SgdState<double> opt({&w}, {0.1, 0.0, 0.5});
    opt.step({});
    CHECK(std::abs(opt.velocity()[0][0] - 0.5) <= 1e-12);
    CHECK(std::abs(w.value[0] - 0.95) <= 1e-12);
  }
}

TEST_CASE("weight decay skips biases unless decay_all is set") {
  Parameter<double> b{"b", T2({1}, 1.0), false};
  SgdState<double> plain({&b}, {0.1, 0.0, 0.5});
  plain.step({});
  CHECK(b.value[0] == 1.0);
  SgdState<double> all({&b}, {0.1, 0.0, 0.5, true});
  all.step({});
  CHECK(std::abs(b.value[0] - 0.95) <= 1e-12);
}

TEST_CASE("sgd rejects a gradient of the wrong shape") {
  Parameter<double> w{"w", T2({2}, 1.0)};
  SgdState<double> opt({&w}, {});
  GradMap<double> g;
  g[&w] = T2({3}, 0.1);
  CHECK_THROWS_AS(opt.step(g), DimensionError);
}

TEST_CASE("learning rate schedule") {
  LrSchedule s{0.5, {10, 20}, 0.1};
  CHECK(s.at(0) == 0.5);
  CHECK(s.at(9) == 0.5);
  CHECK(s.at(10) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(s.at(25) == doctest::Approx(0.005).epsilon(1e-15));
  LrSchedule flat{0.3, {}, 0.1};
  CHECK(flat.at(1000) == 0.3);
}
