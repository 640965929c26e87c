#pragma once

#include <string>
#include <vector>

#include "router.hpp"

namespace backlink {

struct CheckResult {
  std::string name;
  double max_error = 0.0;
  double tolerance = 0.0;
  bool passed = true;
  std::string detail;
};

struct GradcheckReport {
  std::vector<CheckResult> checks;
  bool passed() const;
};

// |a - b| / max(|a|, |b|, floor)
double relative_error(double a, double b, double floor = 1e-6);

// A fixed batch plus the forward context every oracle evaluates it under.
struct OracleBatch {
  Tensor<double> x;
  std::vector<std::int32_t> labels;
  ForwardContext ctx{Mode::Train, 0, false};
};

OracleBatch random_oracle_batch(const NetworkSpec& spec, std::size_t batch, std::uint64_t seed);

// Router gradients for one batch (running statistics untouched).
GradMap<double> router_gradients(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);

// Gradients of sum_m weights[m] * L_m from one tape spanning the whole network,
// with no module boundaries.
GradMap<double> monolithic_gradients(Network<double>& net, const OracleBatch& batch,
                                     const std::vector<double>& weights);

struct FdOptions {
  double tolerance = 1e-4;
  double floor = 1e-6;
  // Entries probed per parameter tensor; 0 probes all of them.
  std::size_t max_entries = 0;
  std::uint64_t seed = 0;
  // Test hook: perturb one router gradient entry before comparing.
  bool corrupt = false;
};

// Router gradients of every parameter against central differences of each
// module's surrogate objective. One result per module.
std::vector<CheckResult> fd_surrogate_check(Network<double>& net, const BackLinkConfig& config,
                                            const OracleBatch& batch, const FdOptions& options);

// K = 1 router gradients against monolithic BP.
CheckResult check_bp_equivalence(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);
// l = 0 gradients of each module unchanged after randomizing every later module.
CheckResult check_gll_reduction(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);
// alpha = 1 gradients equal l = 0 gradients on the backbone.
CheckResult check_alpha_one(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);
// In-range gradients equal alpha * g_local + (1 - alpha) * g_global from two
// separate single-seed passes.
CheckResult check_linearity(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);
// Below-range parameters get the alpha-scaled local gradient and nothing from
// the successor's loss.
CheckResult check_truncation(Network<double>& net, const BackLinkConfig& config, const OracleBatch& batch);
// K = 2 with full-span length: module-1 backbone gradients against the
// monolithic gradient of alpha * L_1 + (1 - alpha) * L_2.
CheckResult check_full_span_monolithic(Network<double>& net, const BackLinkConfig& config,
                                       const OracleBatch& batch, double tolerance = 1e-6);

// Random networks with 3 to 8 units, widths at most 16, mixing dense,
// convolutional and residual units.
NetworkSpec random_tiny_spec(std::uint64_t seed);

// Moves bias-like parameters (no weight decay) off zero so that no ReLU input
// sits exactly on its kink, where finite differences are meaningless.
void jitter_biases(Network<double>& net, std::uint64_t seed, double scale = 0.1);

// Rejects networks too large for finite differences.
void require_tiny(const NetworkSpec& spec);

}  // namespace backlink
