#include "loss.hpp"

#include <algorithm>
#include <cmath>

namespace backlink {

template <typename T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  if (logits.rank() != 2) throw DimensionError("softmax_xent: logits must be (batch, classes), got " + shape_string(logits.shape()));
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  if (labels.size() != b)
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for batch of " + std::to_string(b));
  LossResult<T> r;
  r.error = Tensor<T>(logits.shape());
  const T inv_b = T{1} / static_cast<T>(b);
  for (std::size_t i = 0; i < b; ++i) {
    const auto label = labels[i];
    if (label < 0 || static_cast<std::size_t>(label) >= c)
      throw ConfigError("label " + std::to_string(label) + " outside [0, " + std::to_string(c) + ")");
    const T* z = logits.data() + i * c;
    T* d = r.error.data() + i * c;
    const T m = *std::max_element(z, z + c);
    T sum{0};
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(z[j] - m);
    const T log_sum = std::log(sum);
    r.loss += (log_sum + m - z[label]) * inv_b;
    for (std::size_t j = 0; j < c; ++j) d[j] = std::exp(z[j] - m - log_sum) * inv_b;
    d[label] -= inv_b;
    if (static_cast<std::size_t>(std::max_element(z, z + c) - z) == static_cast<std::size_t>(label)) ++r.correct;
  }
  return r;
}

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels) {
  const std::size_t b = logits.dim(0), c = logits.dim(1);
  std::size_t n = 0;
  for (std::size_t i = 0; i < b; ++i) {
    const T* z = logits.data() + i * c;
    if (static_cast<std::int32_t>(std::max_element(z, z + c) - z) == labels[i]) ++n;
  }
  return n;
}

template LossResult<float> softmax_xent(const Tensor<float>&, std::span<const std::int32_t>);
template LossResult<double> softmax_xent(const Tensor<double>&, std::span<const std::int32_t>);
template std::size_t count_correct(const Tensor<float>&, std::span<const std::int32_t>);
template std::size_t count_correct(const Tensor<double>&, std::span<const std::int32_t>);

}  // namespace backlink
