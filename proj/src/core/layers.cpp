#include "layers.hpp"

#include <cmath>
#include <random>

namespace backlink {

const char* layer_type_name(LayerType t) {
  switch (t) {
    case LayerType::Dense: return "dense";
    case LayerType::Conv3x3: return "conv3x3";
    case LayerType::BatchNorm: return "batchnorm";
    case LayerType::ReLU: return "relu";
    case LayerType::MaxPool2x2: return "maxpool2x2";
    case LayerType::AvgPoolGlobal: return "avgpool_global";
    case LayerType::Flatten: return "flatten";
    case LayerType::Dropout: return "dropout";
    case LayerType::ResidualBlock: return "residual";
  }
  return "?";
}

LayerType layer_type_from_name(const std::string& name) {
  for (auto t : {LayerType::Dense, LayerType::Conv3x3, LayerType::BatchNorm, LayerType::ReLU, LayerType::MaxPool2x2,
                 LayerType::AvgPoolGlobal, LayerType::Flatten, LayerType::Dropout, LayerType::ResidualBlock})
    if (name == layer_type_name(t)) return t;
  throw ConfigError("unknown layer type '" + name + "'");
}

const char* classifier_type_name(ClassifierType t) { return t == ClassifierType::Linear ? "linear" : "conv"; }

ClassifierType classifier_type_from_name(const std::string& name) {
  if (name == "linear") return ClassifierType::Linear;
  if (name == "conv") return ClassifierType::ConvHead;
  throw ConfigError("unknown classifier type '" + name + "' (expected linear or conv)");
}

namespace {

void require_spatial(const LayerSpec& spec, const Shape& in) {
  if (in.size() != 3)
    throw DimensionError(std::string(layer_type_name(spec.type)) + " needs (channels, height, width) input, got " +
                         shape_string(in));
}

void require_channels(const LayerSpec& spec, const Shape& in) {
  if (in.empty() || in[0] != spec.in)
    throw DimensionError(std::string(layer_type_name(spec.type)) + " expects " + std::to_string(spec.in) +
                         " channels, input is " + shape_string(in));
}

std::size_t conv_extent(std::size_t x, std::size_t k, std::size_t stride, std::size_t pad) {
  return (x + 2 * pad - k) / stride + 1;
}

}  // namespace

Shape layer_output_shape(const LayerSpec& spec, const Shape& in) {
  switch (spec.type) {
    case LayerType::Dense:
      if (in.size() != 1 || in[0] != spec.in)
        throw DimensionError("dense(" + std::to_string(spec.in) + "->" + std::to_string(spec.out) +
                             ") cannot take input " + shape_string(in));
      if (spec.out == 0) throw ConfigError("dense layer needs a positive output width");
      return {spec.out};
    case LayerType::Conv3x3:
      require_spatial(spec, in);
      require_channels(spec, in);
      if (spec.stride != 1 && spec.stride != 2) throw ConfigError("conv3x3 stride must be 1 or 2");
      if (spec.out == 0) throw ConfigError("conv3x3 needs a positive channel count");
      return {spec.out, conv_extent(in[1], 3, spec.stride, 1), conv_extent(in[2], 3, spec.stride, 1)};
    case LayerType::BatchNorm:
      require_channels(spec, in);
      return in;
    case LayerType::ReLU:
      return in;
    case LayerType::Dropout:
      if (!(spec.p >= 0.0 && spec.p < 1.0)) throw ConfigError("dropout probability must lie in [0, 1)");
      if (in.size() != 1) throw ConfigError("dropout is only allowed on fully-connected features, got " + shape_string(in));
      return in;
    case LayerType::MaxPool2x2:
      require_spatial(spec, in);
      if (in[1] < 2 || in[2] < 2) throw DimensionError("maxpool2x2 input " + shape_string(in) + " too small");
      return {in[0], in[1] / 2, in[2] / 2};
    case LayerType::AvgPoolGlobal:
      require_spatial(spec, in);
      return {in[0]};
    case LayerType::Flatten:
      return {shape_elements(in)};
    case LayerType::ResidualBlock:
      require_spatial(spec, in);
      require_channels(spec, in);
      if (spec.out == spec.in) return in;
      if (spec.out == 2 * spec.in) return {spec.out, conv_extent(in[1], 3, 2, 1), conv_extent(in[2], 3, 2, 1)};
      throw ConfigError("residual block " + std::to_string(spec.in) + "->" + std::to_string(spec.out) +
                        ": channels must stay equal or double");
  }
  throw ConfigError("unhandled layer type");
}

std::size_t layer_stored_elements(const LayerSpec& spec, const Shape& in) {
  const Shape out = layer_output_shape(spec, in);
  const std::size_t n = shape_elements(out);
  switch (spec.type) {
    case LayerType::Flatten: return 0;
    case LayerType::ResidualBlock: {
      // conv1, bn1, relu, conv2, bn2, [projection], add, relu
      return n * (spec.downsample() ? 8 : 7);
    }
    default: return n;
  }
}

std::size_t layer_macs(const LayerSpec& spec, const Shape& in) {
  const Shape out = layer_output_shape(spec, in);
  switch (spec.type) {
    case LayerType::Dense: return spec.in * spec.out;
    case LayerType::Conv3x3: return shape_elements(out) * spec.in * 9;
    case LayerType::ResidualBlock: {
      const std::size_t spatial = out[1] * out[2];
      std::size_t macs = spatial * spec.out * spec.in * 9 + spatial * spec.out * spec.out * 9;
      if (spec.downsample()) macs += spatial * spec.out * spec.in;
      return macs;
    }
    case LayerType::BatchNorm:
    case LayerType::MaxPool2x2:
    case LayerType::AvgPoolGlobal: return shape_elements(in);
    default: return 0;
  }
}

std::vector<LayerSpec> classifier_layers(const AuxClassifierSpec& spec, const Shape& features) {
  if (spec.classes == 0) throw ConfigError("classifier needs at least one class");
  std::vector<LayerSpec> layers;
  if (spec.type == ClassifierType::Linear) {
    std::size_t width = features.empty() ? 0 : features[0];
    if (features.size() == 3)
      layers.push_back(LayerSpec::avg_pool_global());
    else if (features.size() != 1)
      throw DimensionError("linear classifier cannot take features " + shape_string(features));
    layers.push_back(LayerSpec::dense(width, spec.classes));
    return layers;
  }
  if (features.size() != 3)
    throw ConfigError("conv classifier needs spatial features, got " + shape_string(features));
  if (spec.hidden == 0) throw ConfigError("conv classifier hidden width must be positive");
  const std::size_t c = features[0];
  layers = {LayerSpec::conv3x3(c, c), LayerSpec::batch_norm(c), LayerSpec::relu(), LayerSpec::avg_pool_global(),
            LayerSpec::dense(c, spec.hidden), LayerSpec::relu(), LayerSpec::dense(spec.hidden, spec.classes)};
  return layers;
}

Shape unit_output_shape(const UnitSpec& spec, const Shape& in) {
  if (spec.layers.empty()) throw ConfigError("a unit needs at least one layer");
  Shape s = in;
  for (const auto& l : spec.layers) s = layer_output_shape(l, s);
  return s;
}

// ---- Layer ------------------------------------------------------------------

namespace {

template <typename T>
Parameter<T> normal_param(const std::string& name, Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  Parameter<T> p{name, Tensor<T>(std::move(shape)), true};
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (auto& v : p.value.values()) v = static_cast<T>(dist(rng));
  return p;
}

template <typename T>
Parameter<T> const_param(const std::string& name, std::size_t n, T v) {
  return Parameter<T>{name, Tensor<T>({n}, v), false};
}

template <typename T>
RunningStats<T> fresh_stats(std::size_t c) {
  return {std::vector<T>(c, T{0}), std::vector<T>(c, T{1})};
}

}  // namespace

template <typename T>
Layer<T>::Layer(const LayerSpec& spec, std::uint64_t tag, std::uint64_t seed, const std::string& name)
    : spec_(spec), tag_(tag) {
  std::mt19937_64 rng(mix_seed(seed, tag));
  switch (spec.type) {
    case LayerType::Dense:
      params_.push_back(normal_param<T>(name + ".weight", {spec.out, spec.in}, spec.in, rng));
      params_.push_back(const_param<T>(name + ".bias", spec.out, T{0}));
      break;
    case LayerType::Conv3x3:
      params_.push_back(normal_param<T>(name + ".weight", {spec.out, spec.in, 3, 3}, spec.in * 9, rng));
      params_.push_back(const_param<T>(name + ".bias", spec.out, T{0}));
      break;
    case LayerType::BatchNorm:
      params_.push_back(const_param<T>(name + ".gamma", spec.in, T{1}));
      params_.push_back(const_param<T>(name + ".beta", spec.in, T{0}));
      stats_.push_back(fresh_stats<T>(spec.in));
      break;
    case LayerType::ResidualBlock:
      params_.push_back(normal_param<T>(name + ".conv1", {spec.out, spec.in, 3, 3}, spec.in * 9, rng));
      params_.push_back(const_param<T>(name + ".bn1.gamma", spec.out, T{1}));
      params_.push_back(const_param<T>(name + ".bn1.beta", spec.out, T{0}));
      params_.push_back(normal_param<T>(name + ".conv2", {spec.out, spec.out, 3, 3}, spec.out * 9, rng));
      params_.push_back(const_param<T>(name + ".bn2.gamma", spec.out, T{1}));
      params_.push_back(const_param<T>(name + ".bn2.beta", spec.out, T{0}));
      if (spec.downsample())
        params_.push_back(normal_param<T>(name + ".shortcut", {spec.out, spec.in, 1, 1}, spec.in, rng));
      stats_.push_back(fresh_stats<T>(spec.out));
      stats_.push_back(fresh_stats<T>(spec.out));
      break;
    default:
      break;
  }
}

template <typename T>
Var Layer<T>::batch_norm(Tape<T>& tape, Var x, std::size_t pi, std::size_t si, const ForwardContext& ctx) {
  Var gamma = param(tape, params_[pi]);
  Var beta = param(tape, params_[pi + 1]);
  auto& rs = stats_[si];
  const T eps = static_cast<T>(kBatchNormEps);
  if (ctx.mode == Mode::Eval) return batch_norm_eval<T>(tape, x, gamma, beta, rs.mean, rs.var, eps);
  BatchStats<T> batch;
  Var y = batch_norm_train<T>(tape, x, gamma, beta, eps, &batch);
  if (ctx.update_running_stats) {
    const T m = static_cast<T>(kBatchNormMomentum);
    const T unbias = static_cast<T>(batch.count) / static_cast<T>(batch.count - 1);
    for (std::size_t c = 0; c < rs.mean.size(); ++c) {
      rs.mean[c] = (T{1} - m) * rs.mean[c] + m * batch.mean[c];
      rs.var[c] = (T{1} - m) * rs.var[c] + m * batch.var[c] * unbias;
    }
  }
  return y;
}

template <typename T>
Var Layer<T>::residual(Tape<T>& tape, Var x, const ForwardContext& ctx) {
  const bool down = spec_.downsample();
  const std::size_t stride = down ? 2 : 1;
  Var h = conv2d<T>(tape, x, param(tape, params_[0]), stride, 1);
  h = batch_norm(tape, h, 1, 0, ctx);
  h = relu(tape, h);
  h = conv2d<T>(tape, h, param(tape, params_[3]), 1, 1);
  h = batch_norm(tape, h, 4, 1, ctx);
  Var shortcut = down ? conv2d<T>(tape, x, param(tape, params_[6]), 2, 0) : x;
  return relu(tape, add(tape, h, shortcut));
}

template <typename T>
Var Layer<T>::forward(Tape<T>& tape, Var x, const ForwardContext& ctx) {
  switch (spec_.type) {
    case LayerType::Dense: {
      const auto& xv = tape.value(x);
      if (xv.rank() != 2 || xv.dim(1) != spec_.in)
        throw DimensionError("dense(" + std::to_string(spec_.in) + "->" + std::to_string(spec_.out) +
                             ") cannot take input " + shape_string(xv.shape()));
      Var wt = transpose(tape, param(tape, params_[0]));
      return add_bias(tape, matmul(tape, x, wt), param(tape, params_[1]));
    }
    case LayerType::Conv3x3:
      return add_bias(tape, conv2d<T>(tape, x, param(tape, params_[0]), spec_.stride, 1), param(tape, params_[1]));
    case LayerType::BatchNorm:
      return batch_norm(tape, x, 0, 0, ctx);
    case LayerType::ReLU:
      return relu(tape, x);
    case LayerType::MaxPool2x2:
      return max_pool2x2(tape, x);
    case LayerType::AvgPoolGlobal:
      return avg_pool_global(tape, x);
    case LayerType::Flatten:
      return flatten(tape, x);
    case LayerType::Dropout:
      if (ctx.mode == Mode::Eval || spec_.p == 0.0) return x;
      return dropout<T>(tape, x, static_cast<T>(spec_.p), mix_seed(ctx.dropout_seed, tag_));
    case LayerType::ResidualBlock:
      return residual(tape, x, ctx);
  }
  throw ConfigError("unhandled layer type");
}

// ---- Unit -------------------------------------------------------------------

template <typename T>
Unit<T>::Unit(const UnitSpec& spec, std::size_t index, std::uint64_t seed, const std::string& prefix) : spec_(spec) {
  layers_.reserve(spec.layers.size());
  for (std::size_t j = 0; j < spec.layers.size(); ++j)
    layers_.emplace_back(spec.layers[j], static_cast<std::uint64_t>(index) * 64 + j, seed,
                         prefix + std::to_string(index) + "." + std::to_string(j) + "." +
                             layer_type_name(spec.layers[j].type));
}

template <typename T>
Var Unit<T>::forward(Tape<T>& tape, Var x, const ForwardContext& ctx) {
  for (auto& l : layers_) x = l.forward(tape, x, ctx);
  return x;
}

template <typename T>
std::vector<Parameter<T>*> Unit<T>::parameters() {
  std::vector<Parameter<T>*> out;
  for (auto& l : layers_)
    for (auto& p : l.params()) out.push_back(&p);
  return out;
}

template <typename T>
std::vector<const Parameter<T>*> Unit<T>::parameters() const {
  std::vector<const Parameter<T>*> out;
  for (const auto& l : layers_)
    for (const auto& p : l.params()) out.push_back(&p);
  return out;
}

template <typename T>
std::size_t Unit<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : parameters()) n += p->value.size();
  return n;
}

template class Layer<float>;
template class Layer<double>;
template class Unit<float>;
template class Unit<double>;

}  // namespace backlink
