#pragma once

#include <cstdint>
#include <span>

#include "tensor.hpp"

namespace backlink {

template <typename T>
struct LossResult {
  T loss{0};
  Tensor<T> error;  // d loss / d logits, batch-mean reduction
  std::size_t correct = 0;
};

// Mean softmax cross-entropy over the batch, stabilized by max-subtraction.
template <typename T>
LossResult<T> softmax_xent(const Tensor<T>& logits, std::span<const std::int32_t> labels);

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const std::int32_t> labels);

}  // namespace backlink
