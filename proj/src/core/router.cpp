#include "router.hpp"

#include <algorithm>

namespace backlink {

template <typename T>
Tensor<T> head_backward(const ModuleTrace<T>& trace, const Tensor<T>& classifier_error, GradMap<T>* grads) {
  const Seed<T> seed{trace.logits, classifier_error};
  BackwardOptions<T> options;
  options.first_node = trace.features().id + 1;
  auto adj = trace.tape.backward(std::span<const Seed<T>>(&seed, 1), grads, options);
  return adj.get_or_zero(trace.features(), trace.tape.value(trace.features()).shape());
}

template <typename T>
Tensor<T> module_input_error(const ModuleTrace<T>& trace, const Tensor<T>& feature_error) {
  const Seed<T> seed{trace.features(), feature_error};
  BackwardOptions<T> options;
  options.first_node = trace.input.id + 1;
  auto adj = trace.tape.backward(std::span<const Seed<T>>(&seed, 1), nullptr, options);
  return adj.get_or_zero(trace.input, trace.tape.value(trace.input).shape());
}

template <typename T>
Tensor<T> local_path(const ModuleTrace<T>& trace, const Tensor<T>& local_error, T alpha, GradMap<T>* grads) {
  Tensor<T> e = local_error;
  for (std::size_t i = trace.unit_outputs.size(); i-- > 0;) e = backprop_unit(trace.segment(i), e, grads, alpha);
  return e;
}

template <typename T>
void global_path(const ModuleTrace<T>& trace, const Tensor<T>& global_error, T alpha, std::size_t length,
                 GradMap<T>* grads) {
  Tensor<T> e = (T{1} - alpha) * global_error;
  const std::size_t n = trace.unit_outputs.size();
  for (std::size_t i = n; i-- > n - std::min(length, n);) e = backprop_unit(trace.segment(i), e, grads);
}

template <typename T>
RouteResult<T> route_backward(std::span<const ModuleTrace<T>> traces, const PartitionPlan& plan,
                              const BackLinkConfig& config, std::span<const Tensor<T>> classifier_errors) {
  const std::size_t k = plan.modules();
  if (traces.size() != k) throw ConfigError("route_backward: one trace per module is required");
  if (classifier_errors.size() != k)
    throw ConfigError("route_backward: missing classifier error for " + std::to_string(k - classifier_errors.size()) +
                      " module(s)");
  RouteResult<T> result;
  result.input_errors.resize(k);
  for (std::size_t n = k; n-- > 0;) {
    const auto& trace = traces[n];
    const std::size_t size = trace.unit_outputs.size();
    const std::size_t length = config.effective_length(plan, n);
    const T alpha = static_cast<T>(config.effective_alpha(plan, n));

    const Tensor<T> local = head_backward(trace, classifier_errors[n], &result.grads);
    std::optional<Tensor<T>> global;
    if (length > 0) {
      if (result.input_errors[n + 1].empty()) throw ConfigError("route_backward: successor error unavailable");
      global = result.input_errors[n + 1];
    }
    const bool feeds_predecessor = n > 0 && config.effective_length(plan, n - 1) > 0;
    if (!config.reweight_each_unit) {
      // Same gradients as the packet walk below, with the two components in
      // separate passes; the local pass also yields the predecessor's error.
      Tensor<T> input_error = local_path(trace, local, alpha, &result.grads);
      if (global) global_path(trace, *global, alpha, length, &result.grads);
      if (feeds_predecessor) result.input_errors[n] = std::move(input_error);
      continue;
    }
    ErrorPacket<T> packet = inject_boundary_error(local, global, alpha, length);
    for (std::size_t i = size; i-- > 0;) {
      if (packet.depth_remaining > 0) {
        PropagateOptions opt;
        opt.at_module_input = i == 0;
        opt.reweight = config.reweight_each_unit && i + 1 != size;
        opt.alpha = static_cast<double>(alpha);
        packet = propagate_in_range(packet, trace.segment(i), &result.grads, opt);
      } else {
        packet.local = backprop_unit(trace.segment(i), packet.local, &result.grads);
      }
    }
    // The predecessor's global error is d L_n / d input, without module n's own alpha.
    if (feeds_predecessor)
      result.input_errors[n] = alpha == T{1} ? std::move(packet.local) : module_input_error(trace, local);
  }
  return result;
}

SurrogateObjective build_surrogate_objective(const PartitionPlan& plan, const BackLinkConfig& config,
                                             std::size_t module) {
  if (module >= plan.modules()) throw ConfigError("surrogate objective: module index out of range");
  SurrogateObjective obj;
  obj.module = module;
  const std::size_t length = config.effective_length(plan, module);
  obj.two_term = length > 0;
  obj.alpha = config.effective_alpha(plan, module);
  obj.range_begin = plan.end(module) - length;
  return obj;
}

template <typename T>
SurrogateEvaluator<T>::SurrogateEvaluator(Network<T>& net, const Tensor<T>& x, std::vector<std::int32_t> labels,
                                          ForwardContext ctx, SurrogateObjective objective)
    : net_(&net), labels_(std::move(labels)), ctx_(ctx), objective_(objective) {
  ctx_.update_running_stats = false;
  const auto& plan = net.plan();
  Tape<T> tape;
  Var v = input(tape, x);
  for (std::size_t i = 0; i < plan.begin(objective_.module); ++i) v = net.units()[i].forward(tape, v, ctx_);
  module_input_ = tape.value(v);
  if (objective_.two_term) {
    for (std::size_t i = plan.begin(objective_.module); i < objective_.range_begin; ++i)
      v = net.units()[i].forward(tape, v, ctx_);
    frozen_range_input_ = tape.value(v);
  }
  for (const auto* p : net.head_parameters(objective_.module)) head_params_.push_back(p);
}

template <typename T>
T SurrogateEvaluator<T>::module_loss(Tensor<T> x, std::size_t first_unit, std::size_t module) const {
  Tape<T> tape;
  Var v = input(tape, std::move(x));
  for (std::size_t i = first_unit; i < net_->plan().end(module); ++i) v = net_->units()[i].forward(tape, v, ctx_);
  v = net_->head(module).forward(tape, v, ctx_);
  return softmax_xent(tape.value(v), labels_).loss;
}

template <typename T>
T SurrogateEvaluator<T>::value_for(const Parameter<T>* p) const {
  const std::size_t n = objective_.module;
  const T local = module_loss(module_input_, net_->plan().begin(n), n);
  const bool head = std::find(head_params_.begin(), head_params_.end(), p) != head_params_.end();
  if (head || !objective_.two_term) return local;
  // L_{n+1} from the frozen range entry: range units, then all of module n+1.
  Tape<T> tape;
  Var v = input(tape, frozen_range_input_);
  for (std::size_t i = objective_.range_begin; i < net_->plan().end(n); ++i) v = net_->units()[i].forward(tape, v, ctx_);
  const T next = module_loss(tape.value(v), net_->plan().begin(n + 1), n + 1);
  const T a = static_cast<T>(objective_.alpha);
  return a * local + (T{1} - a) * next;
}

#define BACKLINK_INSTANTIATE_ROUTER(T)                                                                           \
  template Tensor<T> head_backward<T>(const ModuleTrace<T>&, const Tensor<T>&, GradMap<T>*);                     \
  template Tensor<T> module_input_error<T>(const ModuleTrace<T>&, const Tensor<T>&);                             \
  template Tensor<T> local_path<T>(const ModuleTrace<T>&, const Tensor<T>&, T, GradMap<T>*);                     \
  template void global_path<T>(const ModuleTrace<T>&, const Tensor<T>&, T, std::size_t, GradMap<T>*);            \
  template RouteResult<T> route_backward<T>(std::span<const ModuleTrace<T>>, const PartitionPlan&,               \
                                            const BackLinkConfig&, std::span<const Tensor<T>>);                  \
  template class SurrogateEvaluator<T>;

BACKLINK_INSTANTIATE_ROUTER(float)
BACKLINK_INSTANTIATE_ROUTER(double)

}  // namespace backlink
