#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "partition.hpp"

namespace backlink {

// Declarative network: an ordered list of basic units over a per-sample input shape.
struct NetworkSpec {
  std::string name = "custom";
  Shape input;
  std::size_t classes = 10;
  std::vector<UnitSpec> units;

  // Fills inferred input extents (dense `in`, conv/batch-norm channels) and
  // checks every shape; throws on the first inconsistency.
  void resolve();
  // shapes[i] is the input of unit i; shapes.back() the network output.
  std::vector<Shape> unit_shapes() const;
  std::size_t max_width() const;
};

// Named desk-scale and full-scale layouts. Presets: mlp, tiny-cnn, cnn8,
// tiny-resnet, resnet32, resnet110, uniform55.
NetworkSpec preset_network(const std::string& name, std::size_t classes = 10);
std::vector<std::string> preset_names();

// Record of one module's forward pass. Its input is a leaf: errors never flow
// into the previous module through this tape.
template <typename T>
struct ModuleTrace {
  std::size_t module = 0;
  std::size_t first_unit = 0;
  Tape<T> tape;
  Var input;
  std::vector<Var> unit_outputs;
  Var logits;

  Var features() const { return unit_outputs.back(); }
  Var unit_input(std::size_t local_index) const { return local_index == 0 ? input : unit_outputs[local_index - 1]; }
  UnitSegment<T> segment(std::size_t local_index) const {
    return {&tape, unit_input(local_index), unit_outputs[local_index]};
  }
};

template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, PartitionPlan plan, AuxClassifierSpec head, std::uint64_t seed);

  const NetworkSpec& spec() const { return spec_; }
  const PartitionPlan& plan() const { return plan_; }
  const AuxClassifierSpec& head_spec() const { return head_spec_; }
  std::size_t modules() const { return plan_.modules(); }

  std::vector<Unit<T>>& units() { return units_; }
  const std::vector<Unit<T>>& units() const { return units_; }
  Unit<T>& head(std::size_t module) { return heads_.at(module); }
  const Unit<T>& head(std::size_t module) const { return heads_.at(module); }

  // Backbone units then head of one module.
  std::vector<Parameter<T>*> module_parameters(std::size_t module);
  std::vector<Parameter<T>*> backbone_parameters(std::size_t module);
  std::vector<Parameter<T>*> head_parameters(std::size_t module);
  std::vector<Parameter<T>*> all_parameters();

  ModuleTrace<T> forward_module(std::size_t module, Tensor<T> input, const ForwardContext& ctx);
  // Forward through every module; each module's input is a detached copy of
  // the previous module's features.
  std::vector<ModuleTrace<T>> forward(const Tensor<T>& x, const ForwardContext& ctx);
  // Eval-mode logits of the final head.
  Tensor<T> predict(const Tensor<T>& x);

  // Copies parameter values and batch-norm statistics from a network of the
  // same layout (used to clone state across precisions).
  template <typename U>
  void load_state(const Network<U>& other);

 private:
  NetworkSpec spec_;
  PartitionPlan plan_;
  AuxClassifierSpec head_spec_;
  std::vector<Unit<T>> units_;
  std::vector<Unit<T>> heads_;
};

template <typename T>
template <typename U>
void Network<T>::load_state(const Network<U>& other) {
  auto copy_unit = [](Unit<T>& dst, const Unit<U>& src) {
    for (std::size_t j = 0; j < dst.layers().size(); ++j) {
      auto& dl = dst.layers()[j];
      const auto& sl = src.layers()[j];
      for (std::size_t k = 0; k < dl.params().size(); ++k) dl.params()[k].value = sl.params()[k].value.template cast<T>();
      for (std::size_t k = 0; k < dl.running_stats().size(); ++k) {
        const auto& s = sl.running_stats()[k];
        dl.running_stats()[k].mean.assign(s.mean.begin(), s.mean.end());
        dl.running_stats()[k].var.assign(s.var.begin(), s.var.end());
      }
    }
  };
  if (other.units().size() != units_.size() || other.modules() != modules())
    throw ConfigError("load_state: network layouts differ");
  for (std::size_t i = 0; i < units_.size(); ++i) copy_unit(units_[i], other.units()[i]);
  for (std::size_t m = 0; m < modules(); ++m) copy_unit(heads_[m], other.head(m));
}

}  // namespace backlink
