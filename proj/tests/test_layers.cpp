#include "doctest.h"
#include "oracles.hpp"
#include "network.hpp"

#include <cmath>

using namespace backlink;
using T2 = Tensor<double>;

namespace {

const ForwardContext kTrain{Mode::Train, 0, false};

double dot(const T2& a, const T2& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST_CASE("dense with identity weights is the identity") {
  Layer<double> dense(LayerSpec::dense(3, 3), 1, 0, "d");
  dense.params()[0].value = T2::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Tape<double> tape;
  const T2 x = T2::from({2, 3}, {1, -2, 3, 0.5, 0, -1});
  const auto& y = tape.value(dense.forward(tape, input(tape, x), kTrain));
  CHECK(max_abs_diff(y, x) == 0.0);
}

TEST_CASE("batch norm in train mode normalizes (1, 3) to about (-1, 1)") {
  Layer<double> bn(LayerSpec::batch_norm(1), 1, 0, "bn");
  Tape<double> tape;
  const auto& y = tape.value(bn.forward(tape, input(tape, T2::from({2, 1}, {1, 3})), kTrain));
  const double expect = 1.0 / std::sqrt(1.0 + kBatchNormEps);
  CHECK(y[0] == doctest::Approx(-expect).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("batch norm needs two samples in train mode but not in eval mode") {
  Layer<double> bn(LayerSpec::batch_norm(2), 1, 0, "bn");
  Tape<double> tape;
  CHECK_THROWS_AS(bn.forward(tape, input(tape, T2({1, 2})), kTrain), DimensionError);
  CHECK_NOTHROW(bn.forward(tape, input(tape, T2({1, 2})), ForwardContext{Mode::Eval}));
}

TEST_CASE("batch norm running statistics follow the momentum rule") {
  Layer<double> bn(LayerSpec::batch_norm(1), 1, 0, "bn");
  Tape<double> tape;
  bn.forward(tape, input(tape, T2::from({2, 1}, {1, 3})), ForwardContext{Mode::Train, 0, true});
  CHECK(bn.running_stats()[0].mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2));
  // Unbiased batch variance (2) blended into the initial 1.
  CHECK(bn.running_stats()[0].var[0] == doctest::Approx(0.9 * 1 + 0.1 * 2));
  bn.forward(tape, input(tape, T2::from({2, 1}, {1, 3})), kTrain);
  CHECK(bn.running_stats()[0].mean[0] == doctest::Approx(0.2));
}

TEST_CASE("shape incompatibilities are rejected") {
  CHECK_THROWS_AS(layer_output_shape(LayerSpec::dense(4, 2), {3}), DimensionError);
  CHECK_THROWS(layer_output_shape(LayerSpec::conv3x3(3, 8), {4}));
  CHECK_THROWS_AS(layer_output_shape(LayerSpec::dropout(0.5), {4, 2, 2}), ConfigError);
  CHECK_THROWS_AS(layer_output_shape(LayerSpec::dropout(1.0), {4}), ConfigError);
  CHECK_THROWS_AS(layer_output_shape(LayerSpec::residual(8, 12), {8, 4, 4}), ConfigError);
}

TEST_CASE("residual block shapes") {
  CHECK(layer_output_shape(LayerSpec::residual(16, 32), {16, 8, 8}) == Shape{32, 4, 4});
  CHECK(layer_output_shape(LayerSpec::residual(16, 16), {16, 8, 8}) == Shape{16, 8, 8});
  Layer<double> down(LayerSpec::residual(2, 4), 1, 0, "r");
  CHECK(down.params().size() == 7);
  CHECK(down.params().back().value.shape() == Shape{4, 2, 1, 1});
  Layer<double> same(LayerSpec::residual(2, 2), 1, 0, "r");
  CHECK(same.params().size() == 6);
}

TEST_CASE("residual block with zero weights passes relu of the shortcut") {
  Layer<double> block(LayerSpec::residual(2, 2), 1, 0, "r");
  for (auto& p : block.params())
    if (p.name.find("conv") != std::string::npos) p.value = T2(p.value.shape());
  const T2 x = oracle::random_tensor({2, 2, 3, 3}, 4);
  Tape<double> tape;
  const auto& y = tape.value(block.forward(tape, input(tape, x), kTrain));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(y[i] == doctest::Approx(std::max(0.0, x[i])).epsilon(1e-12));
}

TEST_CASE("residual block gradients match finite differences") {
  for (std::size_t out : {3u, 6u}) {
    Layer<double> block(LayerSpec::residual(3, out), 1, 5, "r");
    for (auto& p : block.params())
      if (p.name.find("beta") != std::string::npos) p.value = oracle::random_tensor(p.value.shape(), 6, 0.1);
    T2 xv = oracle::random_tensor({2, 3, 4, 4}, 7);
    const Shape ys = out == 3 ? Shape{2, 3, 4, 4} : Shape{2, 6, 2, 2};
    const T2 e = oracle::random_tensor(ys, 8);
    auto run = [&](GradMap<double>* grads, T2* dx) {
      Tape<double> tape;
      Var x = input(tape, xv);
      Var y = block.forward(tape, x, kTrain);
      if (grads) *dx = tape.backward(std::vector<Seed<double>>{{y, e}}, grads).at(x);
      return dot(tape.value(y), e);
    };
    GradMap<double> grads;
    T2 dx;
    run(&grads, &dx);
    auto f = [&] { return run(nullptr, nullptr); };
    const auto fx = oracle::central_diff(xv, f);
    for (std::size_t i = 0; i < xv.size(); ++i) CHECK(oracle::rel_err(dx[i], fx[i]) <= 1e-4);
    for (auto& p : block.params()) {
      const auto fp = oracle::central_diff(p.value, f);
      for (std::size_t i = 0; i < fp.size(); ++i) {
        INFO(p.name << "[" << i << "]");
        CHECK(oracle::rel_err(grads.at(&p)[i], fp[i]) <= 1e-4);
      }
    }
  }
}

TEST_CASE("initialization is deterministic with zero biases and He-scaled weights") {
  Layer<double> a(LayerSpec::dense(100, 10), 3, 42, "d"), b(LayerSpec::dense(100, 10), 3, 42, "d");
  CHECK(max_abs_diff(a.params()[0].value, b.params()[0].value) == 0.0);
  CHECK(max_abs(a.params()[1].value) == 0.0);
  CHECK_FALSE(a.params()[1].decay);

  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Layer<double> d(LayerSpec::dense(100, 10), 3, seed, "d");
    for (double w : d.params()[0].value.values()) {
      sum += w;
      sq += w * w;
      ++n;
    }
  }
  CHECK(n >= 10000);
  const double mean = sum / n, sd = std::sqrt(sq / n - mean * mean);
  CHECK(std::abs(sd - std::sqrt(2.0 / 100)) <= 0.2 * std::sqrt(2.0 / 100));
}

TEST_CASE("dropout is off in eval mode and seeded in train mode") {
  Layer<double> drop(LayerSpec::dropout(0.5), 1, 0, "p");
  const T2 x = T2({4, 32}, 1.0);
  Tape<double> tape;
  CHECK(max_abs_diff(tape.value(drop.forward(tape, input(tape, x), ForwardContext{Mode::Eval})), x) == 0.0);
  const T2 a = tape.value(drop.forward(tape, input(tape, x), ForwardContext{Mode::Train, 9}));
  const T2 b = tape.value(drop.forward(tape, input(tape, x), ForwardContext{Mode::Train, 9}));
  CHECK(max_abs_diff(a, b) == 0.0);
  std::size_t kept = 0;
  for (double v : a.values()) {
    CHECK((v == 0.0 || v == 2.0));
    kept += v != 0.0;
  }
  CHECK(kept > 32);
  CHECK(kept < 96);
}

TEST_CASE("linear head on zero features with zero bias gives zero logits") {
  AuxClassifierSpec spec{ClassifierType::Linear, 5};
  Unit<double> head(UnitSpec{classifier_layers(spec, {6})}, 0, 1, "head");
  Tape<double> tape;
  const auto& logits = tape.value(head.forward(tape, input(tape, T2({3, 6})), kTrain));
  CHECK(logits.shape() == Shape{3, 5});
  CHECK(max_abs(logits) == 0.0);
}

TEST_CASE("conv head output width equals the class count for any spatial size") {
  AuxClassifierSpec spec{ClassifierType::ConvHead, 7, 16};
  for (std::size_t hw : {1u, 2u, 5u, 8u}) {
    const Shape features{4, hw, hw};
    auto layers = classifier_layers(spec, features);
    CHECK(unit_output_shape(UnitSpec{layers}, features) == Shape{7});
    Unit<double> head(UnitSpec{layers}, 0, 1, "head");
    Tape<double> tape;
    CHECK(tape.value(head.forward(tape, input(tape, oracle::random_tensor({2, 4, hw, hw}, hw)), kTrain)).shape() ==
          Shape{2, 7});
  }
  CHECK_THROWS_AS(classifier_layers(spec, {4}), ConfigError);
}

TEST_CASE("classifier weight gradients match finite differences") {
  for (auto type : {ClassifierType::Linear, ClassifierType::ConvHead}) {
    AuxClassifierSpec spec{type, 3, 5};
    const Shape features{2, 3, 3};
    Unit<double> head(UnitSpec{classifier_layers(spec, features)}, 0, 2, "head");
    for (auto* p : head.parameters())
      if (!p->decay) p->value = oracle::random_tensor(p->value.shape(), 3, 0.1);
    const T2 xv = oracle::random_tensor({3, 2, 3, 3}, 4);
    const T2 e = oracle::random_tensor({3, 3}, 5);
    auto run = [&](GradMap<double>* grads) {
      Tape<double> tape;
      Var y = head.forward(tape, input(tape, xv), kTrain);
      if (grads) tape.backward(std::vector<Seed<double>>{{y, e}}, grads);
      return dot(tape.value(y), e);
    };
    GradMap<double> grads;
    run(&grads);
    for (auto* p : head.parameters()) {
      const auto fp = oracle::central_diff(p->value, [&] { return run(nullptr); });
      for (std::size_t i = 0; i < fp.size(); ++i) {
        INFO(p->name << "[" << i << "]");
        CHECK(oracle::rel_err(grads.at(p)[i], fp[i]) <= 1e-4);
      }
    }
  }
}

TEST_CASE("network specs resolve inferred widths and presets") {
  NetworkSpec spec{"n", {3, 8, 8}, 10, {UnitSpec{{LayerSpec::conv3x3(0, 4), LayerSpec::batch_norm(0), LayerSpec::relu()}},
                                        UnitSpec{{LayerSpec::residual(0, 8)}},
                                        UnitSpec{{LayerSpec::avg_pool_global(), LayerSpec::dense(0, 6)}}}};
  spec.resolve();
  CHECK(spec.units[0].layers[0].in == 3);
  CHECK(spec.units[1].layers[0].in == 4);
  CHECK(spec.units[2].layers[1].in == 8);
  CHECK(spec.unit_shapes().back() == Shape{6});
  for (const auto& name : preset_names()) CHECK_NOTHROW(preset_network(name));
  CHECK(preset_network("resnet32").units.size() == 16);
  CHECK(preset_network("resnet110").units.size() == 55);
  CHECK(preset_network("uniform55").units.size() == 55);
  CHECK(preset_network("cnn8").units.size() == 8);
  CHECK_THROWS_AS(preset_network("nope"), ConfigError);
}
