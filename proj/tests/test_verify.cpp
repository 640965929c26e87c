#include "doctest.h"

#include <random>

#include "verify.hpp"

using namespace backlink;

namespace {

struct Case {
  NetworkSpec spec;
  PartitionPlan plan;
  BackLinkConfig cfg;
};

Case random_case(std::uint64_t s) {
  Case c{random_tiny_spec(s), {}, {}};
  std::mt19937_64 rng(s);
  const std::size_t k = 1 + rng() % std::min<std::size_t>(4, c.spec.units.size());
  c.plan = partition(c.spec.units.size(), k);
  c.cfg.length = rng() % 4;
  c.cfg.alpha = kAlphaGrid[rng() % 5];
  return c;
}

}  // namespace

TEST_CASE("random tiny networks respect the size limits") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    const auto spec = random_tiny_spec(s);
    CHECK(spec.units.size() >= 3);
    CHECK(spec.units.size() <= 8);
    CHECK_NOTHROW(require_tiny(spec));
  }
}

TEST_CASE("fd surrogate check on random tiny networks") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    auto c = random_case(s);
    Network<double> net(c.spec, c.plan, c.cfg.classifier, s);
    jitter_biases(net, s);
    const auto batch = random_oracle_batch(c.spec, 4, s);
    for (const auto& r : fd_surrogate_check(net, c.cfg, batch, {})) {
      INFO("seed " << s << " " << r.name << ": " << r.detail);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("limit-case invariants on random tiny networks") {
  for (std::uint64_t s = 100; s < 110; ++s) {
    auto c = random_case(s);
    Network<double> net(c.spec, c.plan, c.cfg.classifier, s);
    const auto batch = random_oracle_batch(c.spec, 4, s);
    std::vector<CheckResult> checks{check_gll_reduction(net, c.cfg, batch), check_alpha_one(net, c.cfg, batch),
                                    check_linearity(net, c.cfg, batch), check_truncation(net, c.cfg, batch)};
    Network<double> single(c.spec, partition(c.spec.units.size(), 1), c.cfg.classifier, s);
    checks.push_back(check_bp_equivalence(single, c.cfg, batch));
    for (const auto& r : checks) {
      INFO("seed " << s << " " << r.name << ": " << r.detail);
      CHECK(r.passed);
    }
  }
}

TEST_CASE("full-span K=2 matches the monolithic tape") {
  for (std::uint64_t s = 200; s < 206; ++s) {
    const auto spec = random_tiny_spec(s);
    const auto plan = partition(spec.units.size(), 2);
    BackLinkConfig cfg;
    cfg.length = plan.sizes[0];
    cfg.alpha = 0.5;
    Network<double> net(spec, plan, cfg.classifier, s);
    const auto r = check_full_span_monolithic(net, cfg, random_oracle_batch(spec, 4, s));
    INFO(r.detail);
    CHECK(r.max_error <= 1e-6);
  }
}

TEST_CASE("corrupted router gradient is detected") {
  const auto spec = random_tiny_spec(3);
  BackLinkConfig cfg;
  Network<double> net(spec, partition(spec.units.size(), 2), cfg.classifier, 3);
  jitter_biases(net, 3);
  FdOptions opts;
  opts.corrupt = true;
  const auto res = fd_surrogate_check(net, cfg, random_oracle_batch(spec, 4, 3), opts);
  CHECK_FALSE(res.front().passed);
}

TEST_CASE("oversized networks are rejected for gradient checks") {
  NetworkSpec wide{"wide", {32}, 3, {UnitSpec{{LayerSpec::dense(0, 32)}}}};
  CHECK_THROWS_AS(require_tiny(wide), ConfigError);
  NetworkSpec deep{"deep", {4}, 3, std::vector<UnitSpec>(9, UnitSpec{{LayerSpec::dense(0, 4)}})};
  CHECK_THROWS_AS(require_tiny(deep), ConfigError);
}
