#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tensor.hpp"

namespace backlink {

// A trainable tensor owned by a layer. Tapes reference parameters by address,
// so a Parameter must not move while a tape that uses it is alive.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  bool decay = true;  // false for biases and batch-norm affine terms
};

template <typename T>
using GradMap = std::unordered_map<const Parameter<T>*, Tensor<T>>;

template <typename T>
void accumulate(GradMap<T>& grads, const Parameter<T>* param, const Tensor<T>& g, T scale = T{1});

template <typename T>
void accumulate(GradMap<T>& into, const GradMap<T>& from, T scale = T{1});

struct Var {
  std::size_t id = 0;
  friend bool operator==(Var, Var) = default;
};

enum class OpKind {
  Input,
  Param,
  MatMul,
  Transpose,
  AddBias,
  Conv2d,
  Relu,
  BatchNorm,
  MaxPool,
  AvgPoolGlobal,
  Flatten,
  Dropout,
  Add,
  ScaleGrad,
  StopGrad,
};

const char* op_name(OpKind kind);

enum class ConvAlgo { Im2col, Direct };

template <typename T>
class Tape;

template <typename T>
struct TapeNode {
  // Maps the error at this node's output to errors at each input; an empty
  // tensor means no error flows to that input.
  using BackwardFn = std::function<std::vector<Tensor<T>>(const TapeNode&, const Tensor<T>&, const Tape<T>&)>;

  OpKind kind = OpKind::Input;
  std::vector<std::size_t> inputs;
  Tensor<T> value;
  Parameter<T>* param = nullptr;
  T grad_scale = T{1};
  bool barrier = false;
  BackwardFn backward;
};

template <typename T>
struct Seed {
  Var var;
  Tensor<T> error;
};

template <typename T>
struct BackwardOptions {
  // Nodes with id < first_node are not expanded; they only collect adjoints.
  std::size_t first_node = 0;
  T param_scale = T{1};
};

template <typename T>
class Adjoints {
 public:
  explicit Adjoints(std::size_t n) : by_node_(n) {}
  bool has(Var v) const { return v.id < by_node_.size() && !by_node_[v.id].empty(); }
  const Tensor<T>& at(Var v) const;
  // Adjoint or zeros shaped like the node value.
  Tensor<T> get_or_zero(Var v, const Shape& shape) const;
  Tensor<T>& slot(std::size_t id) { return by_node_[id]; }

 private:
  std::vector<Tensor<T>> by_node_;
};

// Records one forward pass. Nodes are appended in execution order, which is a
// topological order; backward walks it in reverse.
template <typename T>
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) noexcept = default;
  Tape& operator=(Tape&&) noexcept = default;

  Var push(TapeNode<T> node);
  const TapeNode<T>& node(Var v) const;
  TapeNode<T>& node(Var v);
  const Tensor<T>& value(Var v) const { return node(v).value; }
  std::size_t size() const noexcept { return nodes_.size(); }
  // Id that the next pushed node will get.
  std::size_t next_id() const noexcept { return nodes_.size(); }

  // Reverse sweep. Parameter leaves reached by an error add
  // param_scale * error to `grads` (if non-null).
  Adjoints<T> backward(std::span<const Seed<T>> seeds, GradMap<T>* grads,
                       const BackwardOptions<T>& options = {}) const;

 private:
  std::vector<TapeNode<T>> nodes_;
};

// ---- ops ------------------------------------------------------------------

template <typename T>
Var input(Tape<T>& tape, Tensor<T> value);
template <typename T>
Var param(Tape<T>& tape, Parameter<T>& p);

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b);
template <typename T>
Var transpose(Tape<T>& tape, Var a);
// Adds bias[j] along axis 1 (features for 2-d, channels for 4-d inputs).
template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias);
template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, std::size_t stride, std::size_t padding,
           ConvAlgo algo = ConvAlgo::Im2col);
template <typename T>
Var relu(Tape<T>& tape, Var x);

template <typename T>
struct BatchStats {
  std::vector<T> mean;
  std::vector<T> var;  // biased
  std::size_t count = 0;
};

// Normalizes over every axis except 1 with the batch's own statistics.
template <typename T>
Var batch_norm_train(Tape<T>& tape, Var x, Var gamma, Var beta, T eps, BatchStats<T>* stats = nullptr);
template <typename T>
Var batch_norm_eval(Tape<T>& tape, Var x, Var gamma, Var beta, std::span<const T> running_mean,
                    std::span<const T> running_var, T eps);

template <typename T>
Var max_pool2x2(Tape<T>& tape, Var x);
template <typename T>
Var avg_pool_global(Tape<T>& tape, Var x);
template <typename T>
Var flatten(Tape<T>& tape, Var x);
// Inverted dropout; the mask is a pure function of `seed`.
template <typename T>
Var dropout(Tape<T>& tape, Var x, T p, std::uint64_t seed);
template <typename T>
Var add(Tape<T>& tape, Var a, Var b);

// Identity forward; backward multiplies the passing error by s in [0, 1].
template <typename T>
Var scale_grad(Tape<T>& tape, Var x, T s);
// Identity forward; backward passes nothing.
template <typename T>
Var stop_grad(Tape<T>& tape, Var x);

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace backlink
