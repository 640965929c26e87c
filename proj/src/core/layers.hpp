#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tape.hpp"

namespace backlink {

enum class LayerType { Dense, Conv3x3, BatchNorm, ReLU, MaxPool2x2, AvgPoolGlobal, Flatten, Dropout, ResidualBlock };

const char* layer_type_name(LayerType t);
LayerType layer_type_from_name(const std::string& name);

// `in`/`out` are features for Dense and channels for Conv3x3, BatchNorm and
// ResidualBlock. A residual block down-samples exactly when out == 2 * in.
struct LayerSpec {
  LayerType type = LayerType::ReLU;
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t stride = 1;
  double p = 0.5;

  static LayerSpec dense(std::size_t in, std::size_t out) { return {LayerType::Dense, in, out}; }
  static LayerSpec conv3x3(std::size_t in, std::size_t out, std::size_t stride = 1) {
    return {LayerType::Conv3x3, in, out, stride};
  }
  static LayerSpec batch_norm(std::size_t c) { return {LayerType::BatchNorm, c, c}; }
  static LayerSpec relu() { return {LayerType::ReLU}; }
  static LayerSpec max_pool() { return {LayerType::MaxPool2x2}; }
  static LayerSpec avg_pool_global() { return {LayerType::AvgPoolGlobal}; }
  static LayerSpec flatten() { return {LayerType::Flatten}; }
  static LayerSpec dropout(double p = 0.5) { return {LayerType::Dropout, 0, 0, 1, p}; }
  static LayerSpec residual(std::size_t in, std::size_t out) { return {LayerType::ResidualBlock, in, out}; }

  bool downsample() const { return type == LayerType::ResidualBlock && out == 2 * in; }
  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

// Per-sample output shape of a layer; throws on an incompatible input.
Shape layer_output_shape(const LayerSpec& spec, const Shape& in);

// Activation elements a layer keeps for its backward pass, per sample.
std::size_t layer_stored_elements(const LayerSpec& spec, const Shape& in);
// Multiply-accumulates of one forward pass, per sample.
std::size_t layer_macs(const LayerSpec& spec, const Shape& in);

enum class ClassifierType { Linear, ConvHead };

const char* classifier_type_name(ClassifierType t);
ClassifierType classifier_type_from_name(const std::string& name);

struct AuxClassifierSpec {
  ClassifierType type = ClassifierType::Linear;
  std::size_t classes = 10;
  std::size_t hidden = 128;
  friend bool operator==(const AuxClassifierSpec&, const AuxClassifierSpec&) = default;
};

// Expands a head into plain layers for features of the given per-sample shape.
// The conv head pools globally after its convolution.
std::vector<LayerSpec> classifier_layers(const AuxClassifierSpec& spec, const Shape& features);

enum class Mode { Train, Eval };

struct ForwardContext {
  Mode mode = Mode::Train;
  std::uint64_t dropout_seed = 0;
  bool update_running_stats = true;
};

inline constexpr double kBatchNormEps = 1e-5;
inline constexpr double kBatchNormMomentum = 0.1;

template <typename T>
struct RunningStats {
  std::vector<T> mean;
  std::vector<T> var;
};

template <typename T>
class Layer {
 public:
  // `tag` identifies the layer inside its network; it keys the dropout mask and
  // the initialization stream.
  Layer(const LayerSpec& spec, std::uint64_t tag, std::uint64_t seed, const std::string& name);

  Var forward(Tape<T>& tape, Var x, const ForwardContext& ctx);

  const LayerSpec& spec() const { return spec_; }
  std::uint64_t tag() const { return tag_; }
  std::vector<Parameter<T>>& params() { return params_; }
  const std::vector<Parameter<T>>& params() const { return params_; }
  std::vector<RunningStats<T>>& running_stats() { return stats_; }
  const std::vector<RunningStats<T>>& running_stats() const { return stats_; }

 private:
  Var batch_norm(Tape<T>& tape, Var x, std::size_t param_index, std::size_t stats_index, const ForwardContext& ctx);
  Var residual(Tape<T>& tape, Var x, const ForwardContext& ctx);

  LayerSpec spec_;
  std::uint64_t tag_;
  std::vector<Parameter<T>> params_;
  std::vector<RunningStats<T>> stats_;
};

// A basic unit: the smallest partitionable element (a layer stack or a residual block).
struct UnitSpec {
  std::vector<LayerSpec> layers;
  friend bool operator==(const UnitSpec&, const UnitSpec&) = default;
};

template <typename T>
class Unit {
 public:
  Unit(const UnitSpec& spec, std::size_t index, std::uint64_t seed, const std::string& prefix = "unit");

  Var forward(Tape<T>& tape, Var x, const ForwardContext& ctx);

  const UnitSpec& spec() const { return spec_; }
  std::vector<Layer<T>>& layers() { return layers_; }
  const std::vector<Layer<T>>& layers() const { return layers_; }
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  std::size_t parameter_count() const;

 private:
  UnitSpec spec_;
  std::vector<Layer<T>> layers_;
};

Shape unit_output_shape(const UnitSpec& spec, const Shape& in);

}  // namespace backlink
