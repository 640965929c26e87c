#pragma once

#include <optional>
#include <vector>

#include "layers.hpp"

namespace backlink {

// Module boundaries over the basic units of a network.
struct PartitionPlan {
  std::vector<std::size_t> sizes;

  std::size_t modules() const { return sizes.size(); }
  std::size_t total_units() const;
  std::size_t begin(std::size_t module) const;
  std::size_t end(std::size_t module) const { return begin(module) + sizes.at(module); }
  std::size_t module_of(std::size_t unit) const;
};

// Even split; when K does not divide the unit count the earlier modules take
// one extra unit each.
PartitionPlan partition(std::size_t total_units, std::size_t modules);

inline constexpr double kAlphaGrid[] = {0.0, 0.25, 0.5, 0.75, 1.0};
bool alpha_on_grid(double alpha);

struct BackLinkConfig {
  std::size_t length = 0;  // propagation length l, in basic units
  double alpha = 1.0;      // weight of the local error at a module boundary
  AuxClassifierSpec classifier;
  // Re-apply alpha / (1 - alpha) at every in-range unit instead of once at the boundary.
  bool reweight_each_unit = false;

  // l clamped to the module size; zero for the final module.
  std::size_t effective_length(const PartitionPlan& plan, std::size_t module) const;
  // alpha, or 1 where no global error arrives.
  double effective_alpha(const PartitionPlan& plan, std::size_t module) const;
  void validate() const;
};

// Local and global error components addressed to one activation.
template <typename T>
struct ErrorPacket {
  Tensor<T> local;
  std::optional<Tensor<T>> global;
  std::size_t depth_remaining = 0;

  Tensor<T> combined() const;
};

// Builds the packet at a module's last unit output. `local` is the classifier
// error pulled back to the features; `global` the successor module's error at
// the same activation.
template <typename T>
ErrorPacket<T> inject_boundary_error(const Tensor<T>& local, const std::optional<Tensor<T>>& global, T alpha,
                                     std::size_t length);

// One recorded unit on a tape: the nodes strictly after `input` up to `output`.
template <typename T>
struct UnitSegment {
  const Tape<T>* tape = nullptr;
  Var input;
  Var output;
};

// Pulls an error at the unit output back to the unit input, adding
// param_scale * (parameter gradients) into `grads` when non-null.
template <typename T>
Tensor<T> backprop_unit(const UnitSegment<T>& unit, const Tensor<T>& error, GradMap<T>* grads,
                        T param_scale = T{1});

struct PropagateOptions {
  bool at_module_input = false;
  bool reweight = false;
  double alpha = 1.0;
};

// Moves both components of a packet one unit down. Parameters of the unit
// receive the sum of both components' gradients.
template <typename T>
ErrorPacket<T> propagate_in_range(const ErrorPacket<T>& packet, const UnitSegment<T>& unit, GradMap<T>* grads,
                                  const PropagateOptions& options = {});

}  // namespace backlink
