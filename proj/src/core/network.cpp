#include "network.hpp"

#include <algorithm>

namespace backlink {

void NetworkSpec::resolve() {
  if (input.empty()) throw ConfigError("network input shape is empty");
  if (units.empty()) throw ConfigError("network has no units");
  if (classes == 0) throw ConfigError("network needs at least one class");
  Shape s = input;
  for (auto& unit : units) {
    if (unit.layers.empty()) throw ConfigError("a unit needs at least one layer");
    for (auto& l : unit.layers) {
      switch (l.type) {
        case LayerType::Dense:
          if (s.size() != 1) throw DimensionError("dense layer needs flat input, got " + shape_string(s));
          l.in = s[0];
          break;
        case LayerType::Conv3x3:
        case LayerType::ResidualBlock:
          if (s.size() != 3) throw DimensionError(std::string(layer_type_name(l.type)) + " needs spatial input, got " + shape_string(s));
          l.in = s[0];
          if (l.out == 0) l.out = l.in;
          break;
        case LayerType::BatchNorm:
          l.in = l.out = s[0];
          break;
        default:
          break;
      }
      s = layer_output_shape(l, s);
    }
  }
}

std::vector<Shape> NetworkSpec::unit_shapes() const {
  std::vector<Shape> shapes{input};
  for (const auto& u : units) shapes.push_back(unit_output_shape(u, shapes.back()));
  return shapes;
}

std::size_t NetworkSpec::max_width() const {
  std::size_t w = 0;
  for (const auto& u : units)
    for (const auto& l : u.layers) w = std::max({w, l.in, l.out});
  return w;
}

namespace {

UnitSpec conv_unit(std::size_t out, bool pool = false) {
  UnitSpec u{{LayerSpec::conv3x3(0, out), LayerSpec::batch_norm(0), LayerSpec::relu()}};
  if (pool) u.layers.push_back(LayerSpec::max_pool());
  return u;
}

UnitSpec res_unit(std::size_t in, std::size_t out) { return UnitSpec{{LayerSpec::residual(in, out)}}; }

NetworkSpec resnet(const std::string& name, std::size_t blocks_per_stage, std::size_t classes) {
  NetworkSpec spec{name, {3, 32, 32}, classes, {conv_unit(16)}};
  std::size_t c = 16;
  for (std::size_t stage = 0; stage < 3; ++stage)
    for (std::size_t b = 0; b < blocks_per_stage; ++b) {
      const std::size_t out = (stage > 0 && b == 0) ? 2 * c : c;
      spec.units.push_back(res_unit(c, out));
      c = out;
    }
  return spec;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"mlp", "tiny-cnn", "cnn8", "tiny-resnet", "resnet32", "resnet110", "uniform55"};
}

NetworkSpec preset_network(const std::string& name, std::size_t classes) {
  NetworkSpec spec;
  if (name == "mlp") {
    UnitSpec hidden{{LayerSpec::dense(0, 32), LayerSpec::batch_norm(0), LayerSpec::relu()}};
    spec = {name, {16}, classes, {hidden, hidden, hidden, {{LayerSpec::dense(0, 32), LayerSpec::relu(), LayerSpec::dropout(0.5)}}}};
  } else if (name == "tiny-cnn") {
    spec = {name, {3, 8, 8}, classes, {conv_unit(8), conv_unit(8, true), conv_unit(16), conv_unit(16)}};
  } else if (name == "cnn8") {
    spec = {name, {3, 8, 8}, classes, {conv_unit(8), conv_unit(8), conv_unit(8, true), conv_unit(16), conv_unit(16),
                                       conv_unit(16), conv_unit(16), conv_unit(16)}};
  } else if (name == "tiny-resnet") {
    spec = {name, {3, 8, 8}, classes, {conv_unit(8), res_unit(8, 8), res_unit(8, 8), res_unit(8, 16), res_unit(16, 16),
                                       res_unit(16, 16)}};
  } else if (name == "resnet32") {
    spec = resnet(name, 5, classes);
  } else if (name == "resnet110") {
    spec = resnet(name, 18, classes);
  } else if (name == "uniform55") {
    spec = {name, {16, 32, 32}, classes, std::vector<UnitSpec>(55, res_unit(16, 16))};
  } else {
    throw ConfigError("unknown network preset '" + name + "'");
  }
  spec.resolve();
  return spec;
}

// ---- Network ----------------------------------------------------------------

template <typename T>
Network<T>::Network(NetworkSpec spec, PartitionPlan plan, AuxClassifierSpec head, std::uint64_t seed)
    : spec_(std::move(spec)), plan_(std::move(plan)), head_spec_(head) {
  spec_.resolve();
  if (plan_.total_units() != spec_.units.size())
    throw ConfigError("partition covers " + std::to_string(plan_.total_units()) + " units, network has " +
                      std::to_string(spec_.units.size()));
  head_spec_.classes = spec_.classes;
  const auto shapes = spec_.unit_shapes();
  units_.reserve(spec_.units.size());
  for (std::size_t i = 0; i < spec_.units.size(); ++i) units_.emplace_back(spec_.units[i], i, seed);
  heads_.reserve(plan_.modules());
  for (std::size_t m = 0; m < plan_.modules(); ++m) {
    UnitSpec head_unit{classifier_layers(head_spec_, shapes[plan_.end(m)])};
    for (auto& l : head_unit.layers)
      if (l.type == LayerType::BatchNorm) l.in = l.out = shapes[plan_.end(m)][0];
    heads_.emplace_back(head_unit, 1000 + m, seed, "head");
  }
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::backbone_parameters(std::size_t module) {
  std::vector<Parameter<T>*> out;
  for (std::size_t i = plan_.begin(module); i < plan_.end(module); ++i) {
    auto ps = units_[i].parameters();
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::head_parameters(std::size_t module) {
  return heads_.at(module).parameters();
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::module_parameters(std::size_t module) {
  auto out = backbone_parameters(module);
  auto hs = head_parameters(module);
  out.insert(out.end(), hs.begin(), hs.end());
  return out;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::all_parameters() {
  std::vector<Parameter<T>*> out;
  for (std::size_t m = 0; m < modules(); ++m) {
    auto ps = module_parameters(m);
    out.insert(out.end(), ps.begin(), ps.end());
  }
  return out;
}

template <typename T>
ModuleTrace<T> Network<T>::forward_module(std::size_t module, Tensor<T> input, const ForwardContext& ctx) {
  if (module >= modules()) throw ConfigError("module index out of range");
  ModuleTrace<T> trace;
  trace.module = module;
  trace.first_unit = plan_.begin(module);
  if (input.rank() < 1 || Shape(input.shape().begin() + 1, input.shape().end()) != spec_.unit_shapes()[trace.first_unit])
    throw DimensionError("module " + std::to_string(module) + " got input " + shape_string(input.shape()));
  trace.input = backlink::input(trace.tape, std::move(input));
  Var x = trace.input;
  for (std::size_t i = plan_.begin(module); i < plan_.end(module); ++i) {
    x = units_[i].forward(trace.tape, x, ctx);
    trace.unit_outputs.push_back(x);
  }
  trace.logits = heads_[module].forward(trace.tape, x, ctx);
  return trace;
}

template <typename T>
std::vector<ModuleTrace<T>> Network<T>::forward(const Tensor<T>& x, const ForwardContext& ctx) {
  std::vector<ModuleTrace<T>> traces;
  traces.reserve(modules());
  Tensor<T> input = x;
  for (std::size_t m = 0; m < modules(); ++m) {
    traces.push_back(forward_module(m, std::move(input), ctx));
    if (m + 1 < modules()) input = traces.back().tape.value(traces.back().features());
  }
  return traces;
}

template <typename T>
Tensor<T> Network<T>::predict(const Tensor<T>& x) {
  ForwardContext ctx{Mode::Eval, 0, false};
  Tape<T> tape;
  Var v = input(tape, x);
  for (auto& u : units_) v = u.forward(tape, v, ctx);
  v = heads_.back().forward(tape, v, ctx);
  return tape.value(v);
}

template class Network<float>;
template class Network<double>;

}  // namespace backlink
