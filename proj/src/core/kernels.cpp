#include "kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <memory>
#include <vector>

namespace backlink::kernels {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Output columns [x0, x1) of one kernel offset read inside the image row.
struct ValidSpan {
  std::size_t x0, x1;
};

ValidSpan valid_span(const ConvGeometry& g, std::size_t kx) {
  const long pad = static_cast<long>(g.padding), ow = static_cast<long>(g.out_width());
  const long s = static_cast<long>(g.stride), w = static_cast<long>(g.width), k = static_cast<long>(kx);
  // smallest x with x*s + k - pad >= 0, and first x with x*s + k - pad >= w
  const long lo = std::clamp((pad - k + s - 1) / s, 0L, ow);
  const long hi = std::clamp((w + pad - k + s - 1) / s, lo, ow);
  return {static_cast<std::size_t>(lo), static_cast<std::size_t>(hi)};
}

// Rows of `cols` are `ld` apart; one sample fills out_height * out_width
// columns of each row.
template <typename T>
void im2col(const ConvGeometry& g, const T* image, T* cols, std::size_t ld) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        T* dst = cols + row * ld;
        const auto [x0, x1] = valid_span(g, kx);
        for (std::size_t y = 0; y < oh; ++y, dst += ow) {
          const long iy = static_cast<long>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) {
            std::fill(dst, dst + ow, T{0});
            continue;
          }
          // rows are a few elements wide; plain loops beat memcpy calls here
          for (std::size_t x = 0; x < x0; ++x) dst[x] = T{0};
          for (std::size_t x = x1; x < ow; ++x) dst[x] = T{0};
          const T* src = image + (c * g.height + iy) * g.width;
          const std::size_t shift = kx - g.padding;  // wraps; x0 keeps every index in the row
          if (g.stride == 1)
            for (std::size_t x = x0; x < x1; ++x) dst[x] = src[x + shift];
          else
            for (std::size_t x = x0; x < x1; ++x) dst[x] = src[x * g.stride + shift];
        }
      }
}

template <typename T>
void col2im(const ConvGeometry& g, const T* cols, T* image, std::size_t ld) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.padding);
  std::size_t row = 0;
  for (std::size_t c = 0; c < g.in_channels; ++c)
    for (std::size_t ky = 0; ky < g.kernel; ++ky)
      for (std::size_t kx = 0; kx < g.kernel; ++kx, ++row) {
        const T* src = cols + row * ld;
        const auto [x0, x1] = valid_span(g, kx);
        for (std::size_t y = 0; y < oh; ++y, src += ow) {
          const long iy = static_cast<long>(y * g.stride + ky) - pad;
          if (iy < 0 || iy >= static_cast<long>(g.height)) continue;
          T* dst = image + (c * g.height + iy) * g.width;
          const std::size_t shift = kx - g.padding;
          for (std::size_t x = x0; x < x1; ++x) dst[x * g.stride + shift] += src[x];
        }
      }
}

}  // namespace

template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, T alpha,
          const T* a, const T* b, T beta, T* c) {
  using Map = Eigen::Map<const RowMat<T>>;
  Eigen::Map<RowMat<T>> out(c, m, n);
  const auto rows_a = trans_a ? k : m, cols_a = trans_a ? m : k;
  const auto rows_b = trans_b ? n : k, cols_b = trans_b ? k : n;
  Map ma(a, rows_a, cols_a);
  Map mb(b, rows_b, cols_b);
  if (beta == T{0}) {
    if (!trans_a && !trans_b)
      out.noalias() = alpha * ma * mb;
    else if (trans_a && !trans_b)
      out.noalias() = alpha * ma.transpose() * mb;
    else if (!trans_a && trans_b)
      out.noalias() = alpha * ma * mb.transpose();
    else
      out.noalias() = alpha * ma.transpose() * mb.transpose();
    return;
  }
  if (beta != T{1}) out *= beta;
  if (!trans_a && !trans_b)
    out.noalias() += alpha * ma * mb;
  else if (trans_a && !trans_b)
    out.noalias() += alpha * ma.transpose() * mb;
  else if (!trans_a && trans_b)
    out.noalias() += alpha * ma * mb.transpose();
  else
    out.noalias() += alpha * ma.transpose() * mb.transpose();
}

namespace {

// The whole batch is lowered into one row-major (in_channels * kernel^2,
// batch * out_height * out_width) matrix so that each pass is one GEMM.
std::size_t lowered_rows(const ConvGeometry& g) { return g.in_channels * g.kernel * g.kernel; }
std::size_t lowered_size(const ConvGeometry& g) { return lowered_rows(g) * g.batch * g.out_height() * g.out_width(); }

template <typename T>
void lower_batch(const ConvGeometry& g, const T* input, T* cols) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t image = g.in_channels * g.height * g.width;
  const std::size_t n = g.batch * spatial;
  for (std::size_t b = 0; b < g.batch; ++b) im2col(g, input + b * image, cols + b * spatial, n);
}

template <typename T>
void conv_forward_lowered(const ConvGeometry& g, const T* cols, const T* weight, T* output) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t n = g.batch * spatial;
  auto out = std::make_unique_for_overwrite<T[]>(g.out_channels * n);
  gemm<T>(false, false, g.out_channels, n, lowered_rows(g), T{1}, weight, cols, T{0}, out.get());
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      std::copy_n(out.get() + o * n + b * spatial, spatial, output + (b * g.out_channels + o) * spatial);
}

template <typename T>
void conv_backward_lowered(const ConvGeometry& g, const T* cols, const T* weight, const T* grad_out,
                           T* grad_input, T* grad_weight) {
  const std::size_t spatial = g.out_height() * g.out_width();
  const std::size_t patch = lowered_rows(g);
  const std::size_t image = g.in_channels * g.height * g.width;
  const std::size_t n = g.batch * spatial;
  auto dout = std::make_unique_for_overwrite<T[]>(g.out_channels * n);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      std::copy_n(grad_out + (b * g.out_channels + o) * spatial, spatial, dout.get() + o * n + b * spatial);
  gemm<T>(false, true, g.out_channels, patch, n, T{1}, dout.get(), cols, T{0}, grad_weight);
  auto dcols = std::make_unique_for_overwrite<T[]>(patch * n);
  gemm<T>(true, false, patch, n, g.out_channels, T{1}, weight, dout.get(), T{0}, dcols.get());
  std::fill(grad_input, grad_input + g.batch * image, T{0});
  for (std::size_t b = 0; b < g.batch; ++b) col2im(g, dcols.get() + b * spatial, grad_input + b * image, n);
}

}  // namespace

template <typename T>
void conv_forward_im2col(const ConvGeometry& g, const T* input, const T* weight, T* output) {
  auto cols = std::make_unique_for_overwrite<T[]>(lowered_size(g));
  lower_batch(g, input, cols.get());
  conv_forward_lowered(g, cols.get(), weight, output);
}

template <typename T>
void conv_backward_im2col(const ConvGeometry& g, const T* input, const T* weight, const T* grad_out,
                          T* grad_input, T* grad_weight) {
  auto cols = std::make_unique_for_overwrite<T[]>(lowered_size(g));
  lower_batch(g, input, cols.get());
  conv_backward_lowered(g, cols.get(), weight, grad_out, grad_input, grad_weight);
}

template <typename T>
void conv_forward_direct(const ConvGeometry& g, const T* input, const T* weight, T* output) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.padding);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          T acc{0};
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - pad;
                const long ix = static_cast<long>(x * g.stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                acc += input[((b * g.in_channels + c) * g.height + iy) * g.width + ix] *
                       weight[((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx];
              }
          output[((b * g.out_channels + o) * oh + y) * ow + x] = acc;
        }
}

template <typename T>
void conv_backward_direct(const ConvGeometry& g, const T* input, const T* weight, const T* grad_out,
                          T* grad_input, T* grad_weight) {
  const std::size_t oh = g.out_height(), ow = g.out_width();
  const long pad = static_cast<long>(g.padding);
  std::fill(grad_input, grad_input + g.batch * g.in_channels * g.height * g.width, T{0});
  std::fill(grad_weight, grad_weight + g.out_channels * g.in_channels * g.kernel * g.kernel, T{0});
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t o = 0; o < g.out_channels; ++o)
      for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
          const T d = grad_out[((b * g.out_channels + o) * oh + y) * ow + x];
          for (std::size_t c = 0; c < g.in_channels; ++c)
            for (std::size_t ky = 0; ky < g.kernel; ++ky)
              for (std::size_t kx = 0; kx < g.kernel; ++kx) {
                const long iy = static_cast<long>(y * g.stride + ky) - pad;
                const long ix = static_cast<long>(x * g.stride + kx) - pad;
                if (iy < 0 || ix < 0 || iy >= static_cast<long>(g.height) ||
                    ix >= static_cast<long>(g.width))
                  continue;
                const std::size_t in_idx = ((b * g.in_channels + c) * g.height + iy) * g.width + ix;
                const std::size_t w_idx = ((o * g.in_channels + c) * g.kernel + ky) * g.kernel + kx;
                grad_input[in_idx] += d * weight[w_idx];
                grad_weight[w_idx] += d * input[in_idx];
              }
        }
}

#define BACKLINK_INSTANTIATE_KERNELS(T)                                                          \
  template void gemm<T>(bool, bool, std::size_t, std::size_t, std::size_t, T, const T*, const T*, \
                        T, T*);                                                                  \
  template void conv_forward_im2col<T>(const ConvGeometry&, const T*, const T*, T*);             \
  template void conv_backward_im2col<T>(const ConvGeometry&, const T*, const T*, const T*, T*,   \
                                        T*);                                                     \
  template void conv_forward_direct<T>(const ConvGeometry&, const T*, const T*, T*);             \
  template void conv_backward_direct<T>(const ConvGeometry&, const T*, const T*, const T*, T*, T*);

BACKLINK_INSTANTIATE_KERNELS(float)
BACKLINK_INSTANTIATE_KERNELS(double)

}  // namespace backlink::kernels
