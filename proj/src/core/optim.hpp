#pragma once

#include <vector>

#include "tape.hpp"

namespace backlink {

struct SgdHyper {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // Decay biases and batch-norm affine terms too.
  bool decay_all = false;
};

// Momentum SGD over a fixed parameter set:
//   g' = g + wd * w;  v = momentum * v + g';  w = w - lr * v
template <typename T>
class SgdState {
 public:
  SgdState(std::vector<Parameter<T>*> params, SgdHyper hyper);

  // Parameters without an entry in `grads` are treated as having zero gradient.
  void step(const GradMap<T>& grads);
  void set_lr(double lr) { hyper_.lr = lr; }
  const SgdHyper& hyper() const { return hyper_; }
  const std::vector<Tensor<T>>& velocity() const { return velocity_; }
  const std::vector<Parameter<T>*>& params() const { return params_; }

 private:
  std::vector<Parameter<T>*> params_;
  std::vector<Tensor<T>> velocity_;
  SgdHyper hyper_;
};

// Piecewise-constant step decay.
struct LrSchedule {
  double base = 0.1;
  std::vector<std::size_t> milestones;
  double factor = 0.1;

  double at(std::size_t epoch) const;
};

}  // namespace backlink
