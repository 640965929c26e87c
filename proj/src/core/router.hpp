#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "loss.hpp"
#include "network.hpp"

namespace backlink {

// Pulls the classifier error back to the module features. Head parameters
// receive the unweighted local-loss gradient.
template <typename T>
Tensor<T> head_backward(const ModuleTrace<T>& trace, const Tensor<T>& classifier_error, GradMap<T>* grads);

// Error-only pull-back from the module features to the module input.
template <typename T>
Tensor<T> module_input_error(const ModuleTrace<T>& trace, const Tensor<T>& feature_error);

// Local path of one module: the local error through every backbone unit, with
// alpha scaling the parameter gradients. Returns the unscaled error reaching
// the module input, d L_n / d input.
template <typename T>
Tensor<T> local_path(const ModuleTrace<T>& trace, const Tensor<T>& local_error, T alpha, GradMap<T>* grads);

// Global path of one module: (1 - alpha) * global error through the top
// `length` units, stopped at the range entry.
template <typename T>
void global_path(const ModuleTrace<T>& trace, const Tensor<T>& global_error, T alpha, std::size_t length,
                 GradMap<T>* grads);

template <typename T>
struct RouteResult {
  GradMap<T> grads;
  // input_errors[n]: d L_n / d (module n input), filled where the predecessor
  // consumes it as its global error.
  std::vector<Tensor<T>> input_errors;
};

// Gradients for every module from its local loss and, within the propagation
// range, its successor's loss.
template <typename T>
RouteResult<T> route_backward(std::span<const ModuleTrace<T>> traces, const PartitionPlan& plan,
                              const BackLinkConfig& config, std::span<const Tensor<T>> classifier_errors);

// J_n = alpha * L_n + (1 - alpha) * L_{n+1}, with L_{n+1} cut off at the
// activation entering module n's propagation range. Head parameters of
// module n follow L_n alone; the final module uses J = L_K.
struct SurrogateObjective {
  std::size_t module = 0;
  double alpha = 1.0;
  std::size_t range_begin = 0;  // absolute index of the first in-range unit
  bool two_term = false;
};

SurrogateObjective build_surrogate_objective(const PartitionPlan& plan, const BackLinkConfig& config,
                                             std::size_t module);

// Evaluates a surrogate objective as a plain function of the parameters, for
// finite-difference checks. The module input and the cut-off activation are
// frozen at construction.
template <typename T>
class SurrogateEvaluator {
 public:
  SurrogateEvaluator(Network<T>& net, const Tensor<T>& x, std::vector<std::int32_t> labels, ForwardContext ctx,
                     SurrogateObjective objective);

  // Value of the objective whose gradient `p` receives, at current parameters.
  T value_for(const Parameter<T>* p) const;
  const SurrogateObjective& objective() const { return objective_; }

 private:
  T module_loss(Tensor<T> input, std::size_t first_unit, std::size_t module) const;

  Network<T>* net_;
  std::vector<std::int32_t> labels_;
  ForwardContext ctx_;
  SurrogateObjective objective_;
  Tensor<T> module_input_;
  Tensor<T> frozen_range_input_;
  std::vector<const Parameter<T>*> head_params_;
};

}  // namespace backlink
