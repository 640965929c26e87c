#include "optim.hpp"

#include <algorithm>

namespace backlink {

template <typename T>
SgdState<T>::SgdState(std::vector<Parameter<T>*> params, SgdHyper hyper) : params_(std::move(params)), hyper_(hyper) {
  if (!(hyper_.lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  if (hyper_.weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  velocity_.reserve(params_.size());
  for (auto* p : params_) velocity_.emplace_back(p->value.shape());
}

template <typename T>
void SgdState<T>::step(const GradMap<T>& grads) {
  const T lr = static_cast<T>(hyper_.lr), mu = static_cast<T>(hyper_.momentum);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& w = params_[i]->value;
    auto& v = velocity_[i];
    const T wd = (params_[i]->decay || hyper_.decay_all) ? static_cast<T>(hyper_.weight_decay) : T{0};
    auto it = grads.find(params_[i]);
    const Tensor<T>* g = it == grads.end() ? nullptr : &it->second;
    if (g) require_same_shape(w.shape(), g->shape(), "sgd step");
    for (std::size_t k = 0; k < w.size(); ++k) {
      const T grad = (g ? (*g)[k] : T{0}) + wd * w[k];
      v[k] = mu * v[k] + grad;
      w[k] -= lr * v[k];
    }
  }
}

double LrSchedule::at(std::size_t epoch) const {
  double lr = base;
  for (auto m : milestones)
    if (epoch >= m) lr *= factor;
  return lr;
}

template class SgdState<float>;
template class SgdState<double>;

}  // namespace backlink
