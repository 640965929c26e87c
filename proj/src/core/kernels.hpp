#pragma once

#include <cstddef>

namespace backlink::kernels {

// Row-major C = alpha * op(A) * op(B) + beta * C with op(A): m x k, op(B): k x n.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, const T* b, T beta, T* c);

struct ConvGeometry {
  std::size_t batch, in_channels, height, width;
  std::size_t out_channels, kernel, stride, padding;
  std::size_t out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  std::size_t out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

// Lowering path: im2col + GEMM over the whole batch.
template <typename T>
void conv_forward_im2col(const ConvGeometry& g, const T* input, const T* weight, T* output);
template <typename T>
void conv_backward_im2col(const ConvGeometry& g, const T* input, const T* weight, const T* grad_out,
                          T* grad_input, T* grad_weight);

// Reference path: nested loops straight from the definition of cross-correlation.
template <typename T>
void conv_forward_direct(const ConvGeometry& g, const T* input, const T* weight, T* output);
template <typename T>
void conv_backward_direct(const ConvGeometry& g, const T* input, const T* weight, const T* grad_out,
                          T* grad_input, T* grad_weight);

}  // namespace backlink::kernels
