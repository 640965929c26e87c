#include "partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace backlink {

std::size_t PartitionPlan::total_units() const { return std::accumulate(sizes.begin(), sizes.end(), std::size_t{0}); }

std::size_t PartitionPlan::begin(std::size_t module) const {
  if (module > sizes.size()) throw ConfigError("module index out of range");
  return std::accumulate(sizes.begin(), sizes.begin() + static_cast<long>(module), std::size_t{0});
}

std::size_t PartitionPlan::module_of(std::size_t unit) const {
  std::size_t end = 0;
  for (std::size_t m = 0; m < sizes.size(); ++m) {
    end += sizes[m];
    if (unit < end) return m;
  }
  throw ConfigError("unit " + std::to_string(unit) + " outside the partition");
}

PartitionPlan partition(std::size_t total_units, std::size_t modules) {
  if (modules == 0) throw ConfigError("number of modules must be at least 1");
  if (modules > total_units)
    throw ConfigError("cannot split " + std::to_string(total_units) + " units into " + std::to_string(modules) +
                      " modules");
  PartitionPlan plan;
  const std::size_t base = total_units / modules, extra = total_units % modules;
  for (std::size_t m = 0; m < modules; ++m) plan.sizes.push_back(base + (m < extra ? 1 : 0));
  return plan;
}

bool alpha_on_grid(double alpha) {
  return std::any_of(std::begin(kAlphaGrid), std::end(kAlphaGrid), [&](double a) { return a == alpha; });
}

std::size_t BackLinkConfig::effective_length(const PartitionPlan& plan, std::size_t module) const {
  if (module + 1 >= plan.modules()) return 0;
  return std::min(length, plan.sizes.at(module));
}

double BackLinkConfig::effective_alpha(const PartitionPlan& plan, std::size_t module) const {
  return effective_length(plan, module) == 0 ? 1.0 : alpha;
}

void BackLinkConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("alpha must lie in [0, 1]");
}

template <typename T>
Tensor<T> ErrorPacket<T>::combined() const {
  Tensor<T> out = local;
  if (global) out += *global;
  return out;
}

template <typename T>
ErrorPacket<T> inject_boundary_error(const Tensor<T>& local, const std::optional<Tensor<T>>& global, T alpha,
                                     std::size_t length) {
  if (!(alpha >= T{0} && alpha <= T{1})) throw ConfigError("alpha must lie in [0, 1]");
  if (global && length == 0) throw ConfigError("a global error was supplied with propagation length 0");
  ErrorPacket<T> packet;
  if (!global || length == 0) {
    packet.local = local;
    return packet;
  }
  require_same_shape(local.shape(), global->shape(), "boundary error");
  packet.local = alpha * local;
  packet.global = (T{1} - alpha) * *global;
  packet.depth_remaining = length;
  return packet;
}

template <typename T>
Tensor<T> backprop_unit(const UnitSegment<T>& unit, const Tensor<T>& error, GradMap<T>* grads, T param_scale) {
  const Seed<T> seed{unit.output, error};
  BackwardOptions<T> options;
  options.first_node = unit.input.id + 1;
  options.param_scale = param_scale;
  auto adj = unit.tape->backward(std::span<const Seed<T>>(&seed, 1), grads, options);
  return adj.get_or_zero(unit.input, unit.tape->value(unit.input).shape());
}

template <typename T>
ErrorPacket<T> propagate_in_range(const ErrorPacket<T>& packet, const UnitSegment<T>& unit, GradMap<T>* grads,
                                  const PropagateOptions& options) {
  if (packet.depth_remaining == 0) throw ConfigError("propagate_in_range called with no depth remaining");
  if (!packet.global) throw ConfigError("in-range packet is missing its global component");
  const T a = static_cast<T>(options.alpha);
  Tensor<T> local_in = options.reweight ? a * packet.local : packet.local;
  Tensor<T> global_in = options.reweight ? (T{1} - a) * *packet.global : *packet.global;

  ErrorPacket<T> out;
  out.local = backprop_unit(unit, local_in, grads);
  Tensor<T> global = backprop_unit(unit, global_in, grads);
  out.depth_remaining = packet.depth_remaining - 1;
  if (options.at_module_input) out.depth_remaining = 0;
  if (out.depth_remaining > 0) out.global = std::move(global);
  return out;
}

#define BACKLINK_INSTANTIATE_PARTITION(T)                                                                     \
  template struct ErrorPacket<T>;                                                                             \
  template ErrorPacket<T> inject_boundary_error<T>(const Tensor<T>&, const std::optional<Tensor<T>>&, T,      \
                                                   std::size_t);                                              \
  template Tensor<T> backprop_unit<T>(const UnitSegment<T>&, const Tensor<T>&, GradMap<T>*, T);               \
  template ErrorPacket<T> propagate_in_range<T>(const ErrorPacket<T>&, const UnitSegment<T>&, GradMap<T>*,    \
                                                const PropagateOptions&);

BACKLINK_INSTANTIATE_PARTITION(float)
BACKLINK_INSTANTIATE_PARTITION(double)

}  // namespace backlink
