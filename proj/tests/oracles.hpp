#pragma once

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "tensor.hpp"

namespace oracle {

// Central difference of f with respect to every entry of t.
inline std::vector<double> central_diff(backlink::Tensor<double>& t, const std::function<double()>& f,
                                        double h = 1e-6) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    const double v = t[i];
    t[i] = v + h;
    const double up = f();
    t[i] = v - h;
    const double down = f();
    t[i] = v;
    out[i] = (up - down) / (2 * h);
  }
  return out;
}

inline double rel_err(double a, double b) { return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6}); }

inline backlink::Tensor<double> random_tensor(backlink::Shape shape, std::uint64_t seed, double scale = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  backlink::Tensor<double> t(shape);
  for (auto& v : t.values()) v = n(rng);
  return t;
}

// Brute-force convolution straight from the definition.
inline backlink::Tensor<double> naive_conv(const backlink::Tensor<double>& x, const backlink::Tensor<double>& w,
                                           std::size_t stride, std::size_t pad) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), O = w.dim(0), K = w.dim(2);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  backlink::Tensor<double> y({B, O, OH, OW});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < OH; ++i)
        for (std::size_t j = 0; j < OW; ++j) {
          double s = 0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ki = 0; ki < K; ++ki)
              for (std::size_t kj = 0; kj < K; ++kj) {
                const long r = static_cast<long>(i * stride + ki) - static_cast<long>(pad);
                const long q = static_cast<long>(j * stride + kj) - static_cast<long>(pad);
                if (r < 0 || q < 0 || r >= static_cast<long>(H) || q >= static_cast<long>(W)) continue;
                s += x[((b * C + c) * H + r) * W + q] * w[((o * C + c) * K + ki) * K + kj];
              }
          y[((b * O + o) * OH + i) * OW + j] = s;
        }
  return y;
}

}  // namespace oracle
