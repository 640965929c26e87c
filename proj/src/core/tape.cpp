#include "tape.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "kernels.hpp"

namespace backlink {

const char* op_name(OpKind kind) {
  switch (kind) {
    case OpKind::Input: return "input";
    case OpKind::Param: return "param";
    case OpKind::MatMul: return "matmul";
    case OpKind::Transpose: return "transpose";
    case OpKind::AddBias: return "add_bias";
    case OpKind::Conv2d: return "conv2d";
    case OpKind::Relu: return "relu";
    case OpKind::BatchNorm: return "batch_norm";
    case OpKind::MaxPool: return "max_pool";
    case OpKind::AvgPoolGlobal: return "avg_pool_global";
    case OpKind::Flatten: return "flatten";
    case OpKind::Dropout: return "dropout";
    case OpKind::Add: return "add";
    case OpKind::ScaleGrad: return "scale_grad";
    case OpKind::StopGrad: return "stop_grad";
  }
  return "?";
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  // splitmix64 finalizer over a combined word
  std::uint64_t z = a + 0x9e3779b97f4a7c15ULL * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

template <typename T>
void accumulate(GradMap<T>& grads, const Parameter<T>* param, const Tensor<T>& g, T scale) {
  auto it = grads.find(param);
  if (it == grads.end()) {
    Tensor<T> copy = g;
    if (scale != T{1}) copy *= scale;
    grads.emplace(param, std::move(copy));
  } else {
    it->second.axpy(scale, g);
  }
}

template <typename T>
void accumulate(GradMap<T>& into, const GradMap<T>& from, T scale) {
  for (const auto& [p, g] : from) accumulate(into, p, g, scale);
}

template <typename T>
const Tensor<T>& Adjoints<T>::at(Var v) const {
  if (!has(v)) throw DimensionError("no adjoint reached node " + std::to_string(v.id));
  return by_node_[v.id];
}

template <typename T>
Tensor<T> Adjoints<T>::get_or_zero(Var v, const Shape& shape) const {
  return has(v) ? by_node_[v.id] : Tensor<T>(shape);
}

template <typename T>
Var Tape<T>::push(TapeNode<T> node) {
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

template <typename T>
const TapeNode<T>& Tape<T>::node(Var v) const {
  if (v.id >= nodes_.size()) throw DimensionError("variable " + std::to_string(v.id) + " is not on the tape");
  return nodes_[v.id];
}

template <typename T>
TapeNode<T>& Tape<T>::node(Var v) {
  if (v.id >= nodes_.size()) throw DimensionError("variable " + std::to_string(v.id) + " is not on the tape");
  return nodes_[v.id];
}

template <typename T>
Adjoints<T> Tape<T>::backward(std::span<const Seed<T>> seeds, GradMap<T>* grads,
                              const BackwardOptions<T>& options) const {
  Adjoints<T> adj(nodes_.size());
  std::size_t top = 0;
  for (const auto& seed : seeds) {
    if (seed.var.id >= nodes_.size())
      throw DimensionError("seed on variable " + std::to_string(seed.var.id) + " which is not on the tape");
    require_same_shape(nodes_[seed.var.id].value.shape(), seed.error.shape(), "backward seed");
    auto& slot = adj.slot(seed.var.id);
    if (slot.empty())
      slot = seed.error;
    else
      slot += seed.error;
    top = std::max(top, seed.var.id + 1);
  }
  for (std::size_t id = top; id-- > options.first_node;) {
    const auto& n = nodes_[id];
    Tensor<T>& err = adj.slot(id);
    if (err.empty()) continue;
    if (n.kind == OpKind::Param) {
      if (grads) accumulate(*grads, static_cast<const Parameter<T>*>(n.param), err, options.param_scale);
      continue;
    }
    if (n.barrier || !n.backward) continue;
    auto input_errors = n.backward(n, err, *this);
    for (std::size_t i = 0; i < n.inputs.size(); ++i) {
      auto& g = input_errors[i];
      if (g.empty()) continue;
      if (n.grad_scale != T{1}) g *= n.grad_scale;
      auto& dst = adj.slot(n.inputs[i]);
      if (dst.empty())
        dst = std::move(g);
      else
        dst += g;
    }
  }
  return adj;
}

// ---- ops ------------------------------------------------------------------

namespace {

template <typename T>
using Errors = std::vector<Tensor<T>>;

// (outer, channels, inner) view of a tensor whose axis 1 is the channel axis.
struct ChannelView {
  std::size_t outer, channels, inner;
};

ChannelView channel_view(const Shape& s) {
  if (s.size() < 2) throw DimensionError("expected at least 2 axes, got " + shape_string(s));
  std::size_t inner = 1;
  for (std::size_t i = 2; i < s.size(); ++i) inner *= s[i];
  return {s[0], s[1], inner};
}

template <typename T>
Var push_op(Tape<T>& tape, OpKind kind, std::vector<std::size_t> inputs, Tensor<T> value,
            typename TapeNode<T>::BackwardFn fn) {
  TapeNode<T> n;
  n.kind = kind;
  n.inputs = std::move(inputs);
  n.value = std::move(value);
  n.backward = std::move(fn);
  return tape.push(std::move(n));
}

}  // namespace

template <typename T>
Var input(Tape<T>& tape, Tensor<T> value) {
  TapeNode<T> n;
  n.kind = OpKind::Input;
  n.value = std::move(value);
  return tape.push(std::move(n));
}

template <typename T>
Var param(Tape<T>& tape, Parameter<T>& p) {
  TapeNode<T> n;
  n.kind = OpKind::Param;
  n.value = p.value;
  n.param = &p;
  return tape.push(std::move(n));
}

template <typename T>
Var matmul(Tape<T>& tape, Var a, Var b) {
  const auto& av = tape.value(a);
  const auto& bv = tape.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0))
    throw DimensionError("matmul: cannot multiply " + shape_string(av.shape()) + " by " +
                         shape_string(bv.shape()));
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  kernels::gemm<T>(false, false, m, n, k, T{1}, av.data(), bv.data(), T{0}, out.data());
  return push_op<T>(tape, OpKind::MatMul, {a.id, b.id}, std::move(out),
                    [m, k, n](const TapeNode<T>& node, const Tensor<T>& dout, const Tape<T>& t) {
                      const auto& av = t.value(Var{node.inputs[0]});
                      const auto& bv = t.value(Var{node.inputs[1]});
                      Tensor<T> da({m, k}), db({k, n});
                      kernels::gemm<T>(false, true, m, k, n, T{1}, dout.data(), bv.data(), T{0}, da.data());
                      kernels::gemm<T>(true, false, k, n, m, T{1}, av.data(), dout.data(), T{0}, db.data());
                      return Errors<T>{std::move(da), std::move(db)};
                    });
}

template <typename T>
Var transpose(Tape<T>& tape, Var a) {
  const auto& av = tape.value(a);
  if (av.rank() != 2) throw DimensionError("transpose: expected a matrix, got " + shape_string(av.shape()));
  const std::size_t r = av.dim(0), c = av.dim(1);
  auto flip = [](const Tensor<T>& x, std::size_t rows, std::size_t cols) {
    Tensor<T> out({cols, rows});
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) out[j * rows + i] = x[i * cols + j];
    return out;
  };
  return push_op<T>(tape, OpKind::Transpose, {a.id}, flip(av, r, c),
                    [r, c, flip](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      return Errors<T>{flip(dout, c, r)};
                    });
}

template <typename T>
Var add_bias(Tape<T>& tape, Var x, Var bias) {
  const auto& xv = tape.value(x);
  const auto& bv = tape.value(bias);
  const auto view = channel_view(xv.shape());
  if (bv.rank() != 1 || bv.dim(0) != view.channels)
    throw DimensionError("add_bias: bias " + shape_string(bv.shape()) + " does not match input " +
                         shape_string(xv.shape()));
  Tensor<T> out = xv;
  for (std::size_t o = 0; o < view.outer; ++o)
    for (std::size_t c = 0; c < view.channels; ++c) {
      T* p = out.data() + (o * view.channels + c) * view.inner;
      for (std::size_t i = 0; i < view.inner; ++i) p[i] += bv[c];
    }
  return push_op<T>(tape, OpKind::AddBias, {x.id, bias.id}, std::move(out),
                    [view](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      Tensor<T> db({view.channels});
                      for (std::size_t o = 0; o < view.outer; ++o)
                        for (std::size_t c = 0; c < view.channels; ++c) {
                          const T* p = dout.data() + (o * view.channels + c) * view.inner;
                          for (std::size_t i = 0; i < view.inner; ++i) db[c] += p[i];
                        }
                      return Errors<T>{dout, std::move(db)};
                    });
}

template <typename T>
Var conv2d(Tape<T>& tape, Var x, Var kernel, std::size_t stride, std::size_t padding, ConvAlgo algo) {
  const auto& xv = tape.value(x);
  const auto& kv = tape.value(kernel);
  if (xv.rank() != 4 || kv.rank() != 4)
    throw DimensionError("conv2d: expected 4-d input and kernel, got " + shape_string(xv.shape()) + " and " +
                         shape_string(kv.shape()));
  if (kv.dim(1) != xv.dim(1))
    throw DimensionError("conv2d: kernel " + shape_string(kv.shape()) + " expects " + std::to_string(kv.dim(1)) +
                         " input channels, input " + shape_string(xv.shape()) + " has " + std::to_string(xv.dim(1)));
  if (kv.dim(2) != kv.dim(3)) throw DimensionError("conv2d: kernel must be square, got " + shape_string(kv.shape()));
  if (stride == 0) throw DimensionError("conv2d: stride must be positive");
  kernels::ConvGeometry g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), kv.dim(0), kv.dim(2), stride, padding};
  if (g.height + 2 * padding < g.kernel || g.width + 2 * padding < g.kernel)
    throw DimensionError("conv2d: non-positive output extent for input " + shape_string(xv.shape()) +
                         " with kernel " + std::to_string(g.kernel) + " and padding " + std::to_string(padding));
  Tensor<T> out({g.batch, g.out_channels, g.out_height(), g.out_width()});
  if (algo == ConvAlgo::Im2col)
    kernels::conv_forward_im2col(g, xv.data(), kv.data(), out.data());
  else
    kernels::conv_forward_direct(g, xv.data(), kv.data(), out.data());
  return push_op<T>(tape, OpKind::Conv2d, {x.id, kernel.id}, std::move(out),
                    [g, algo](const TapeNode<T>& node, const Tensor<T>& dout, const Tape<T>& t) {
                      const auto& xv = t.value(Var{node.inputs[0]});
                      const auto& kv = t.value(Var{node.inputs[1]});
                      Tensor<T> dx(xv.shape()), dk(kv.shape());
                      if (algo == ConvAlgo::Im2col)
                        kernels::conv_backward_im2col(g, xv.data(), kv.data(), dout.data(), dx.data(), dk.data());
                      else
                        kernels::conv_backward_direct(g, xv.data(), kv.data(), dout.data(), dx.data(), dk.data());
                      return Errors<T>{std::move(dx), std::move(dk)};
                    });
}

template <typename T>
Var relu(Tape<T>& tape, Var x) {
  Tensor<T> out = tape.value(x);
  for (auto& v : out.values()) v = v > T{0} ? v : T{0};
  return push_op<T>(tape, OpKind::Relu, {x.id}, std::move(out),
                    [](const TapeNode<T>& node, const Tensor<T>& dout, const Tape<T>& t) {
                      const auto& xv = t.value(Var{node.inputs[0]});
                      Tensor<T> dx = dout;
                      for (std::size_t i = 0; i < dx.size(); ++i)
                        if (!(xv[i] > T{0})) dx[i] = T{0};
                      return Errors<T>{std::move(dx)};
                    });
}

template <typename T>
Var batch_norm_train(Tape<T>& tape, Var x, Var gamma, Var beta, T eps, BatchStats<T>* stats) {
  const auto& xv = tape.value(x);
  const auto view = channel_view(xv.shape());
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  if (gv.size() != view.channels || bv.size() != view.channels)
    throw DimensionError("batch_norm: affine parameters do not match input " + shape_string(xv.shape()));
  if (view.outer < 2)
    throw DimensionError("batch_norm: training mode needs a batch of at least 2, got " + std::to_string(view.outer));
  const std::size_t count = view.outer * view.inner;
  std::vector<T> mean(view.channels, T{0}), var(view.channels, T{0}), inv_std(view.channels);
  for (std::size_t o = 0; o < view.outer; ++o)
    for (std::size_t c = 0; c < view.channels; ++c) {
      const T* p = xv.data() + (o * view.channels + c) * view.inner;
      for (std::size_t i = 0; i < view.inner; ++i) mean[c] += p[i];
    }
  for (auto& m : mean) m /= static_cast<T>(count);
  for (std::size_t o = 0; o < view.outer; ++o)
    for (std::size_t c = 0; c < view.channels; ++c) {
      const T* p = xv.data() + (o * view.channels + c) * view.inner;
      for (std::size_t i = 0; i < view.inner; ++i) var[c] += (p[i] - mean[c]) * (p[i] - mean[c]);
    }
  for (std::size_t c = 0; c < view.channels; ++c) {
    var[c] /= static_cast<T>(count);
    inv_std[c] = T{1} / std::sqrt(var[c] + eps);
  }
  Tensor<T> xhat(xv.shape()), out(xv.shape());
  for (std::size_t o = 0; o < view.outer; ++o)
    for (std::size_t c = 0; c < view.channels; ++c) {
      const std::size_t base = (o * view.channels + c) * view.inner;
      for (std::size_t i = 0; i < view.inner; ++i) {
        xhat[base + i] = (xv[base + i] - mean[c]) * inv_std[c];
        out[base + i] = gv[c] * xhat[base + i] + bv[c];
      }
    }
  if (stats) *stats = BatchStats<T>{mean, var, count};
  return push_op<T>(
      tape, OpKind::BatchNorm, {x.id, gamma.id, beta.id}, std::move(out),
      [view, count, xhat = std::move(xhat), inv_std](const TapeNode<T>& node, const Tensor<T>& dout,
                                                     const Tape<T>& t) {
        const auto& gv = t.value(Var{node.inputs[1]});
        Tensor<T> dgamma({view.channels}), dbeta({view.channels});
        for (std::size_t o = 0; o < view.outer; ++o)
          for (std::size_t c = 0; c < view.channels; ++c) {
            const std::size_t base = (o * view.channels + c) * view.inner;
            for (std::size_t i = 0; i < view.inner; ++i) {
              dbeta[c] += dout[base + i];
              dgamma[c] += dout[base + i] * xhat[base + i];
            }
          }
        Tensor<T> dx(dout.shape());
        const T n = static_cast<T>(count);
        for (std::size_t o = 0; o < view.outer; ++o)
          for (std::size_t c = 0; c < view.channels; ++c) {
            const std::size_t base = (o * view.channels + c) * view.inner;
            const T k = gv[c] * inv_std[c] / n;
            for (std::size_t i = 0; i < view.inner; ++i)
              dx[base + i] = k * (n * dout[base + i] - dbeta[c] - xhat[base + i] * dgamma[c]);
          }
        return Errors<T>{std::move(dx), std::move(dgamma), std::move(dbeta)};
      });
}

template <typename T>
Var batch_norm_eval(Tape<T>& tape, Var x, Var gamma, Var beta, std::span<const T> running_mean,
                    std::span<const T> running_var, T eps) {
  const auto& xv = tape.value(x);
  const auto view = channel_view(xv.shape());
  const auto& gv = tape.value(gamma);
  const auto& bv = tape.value(beta);
  if (gv.size() != view.channels || bv.size() != view.channels || running_mean.size() != view.channels ||
      running_var.size() != view.channels)
    throw DimensionError("batch_norm: parameters do not match input " + shape_string(xv.shape()));
  std::vector<T> inv_std(view.channels);
  for (std::size_t c = 0; c < view.channels; ++c) inv_std[c] = T{1} / std::sqrt(running_var[c] + eps);
  Tensor<T> xhat(xv.shape()), out(xv.shape());
  for (std::size_t o = 0; o < view.outer; ++o)
    for (std::size_t c = 0; c < view.channels; ++c) {
      const std::size_t base = (o * view.channels + c) * view.inner;
      for (std::size_t i = 0; i < view.inner; ++i) {
        xhat[base + i] = (xv[base + i] - running_mean[c]) * inv_std[c];
        out[base + i] = gv[c] * xhat[base + i] + bv[c];
      }
    }
  return push_op<T>(tape, OpKind::BatchNorm, {x.id, gamma.id, beta.id}, std::move(out),
                    [view, xhat = std::move(xhat), inv_std](const TapeNode<T>& node, const Tensor<T>& dout,
                                                            const Tape<T>& t) {
                      const auto& gv = t.value(Var{node.inputs[1]});
                      Tensor<T> dx(dout.shape()), dgamma({view.channels}), dbeta({view.channels});
                      for (std::size_t o = 0; o < view.outer; ++o)
                        for (std::size_t c = 0; c < view.channels; ++c) {
                          const std::size_t base = (o * view.channels + c) * view.inner;
                          for (std::size_t i = 0; i < view.inner; ++i) {
                            dx[base + i] = dout[base + i] * gv[c] * inv_std[c];
                            dbeta[c] += dout[base + i];
                            dgamma[c] += dout[base + i] * xhat[base + i];
                          }
                        }
                      return Errors<T>{std::move(dx), std::move(dgamma), std::move(dbeta)};
                    });
}

template <typename T>
Var max_pool2x2(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 4) throw DimensionError("max_pool2x2: expected 4-d input, got " + shape_string(xv.shape()));
  const std::size_t b = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  const std::size_t oh = h / 2, ow = w / 2;
  if (oh == 0 || ow == 0) throw DimensionError("max_pool2x2: input " + shape_string(xv.shape()) + " too small");
  Tensor<T> out({b, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  for (std::size_t bc = 0; bc < b * c; ++bc)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) {
        std::size_t best = bc * h * w + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = bc * h * w + (2 * y + dy) * w + 2 * xx + dx;
            if (xv[idx] > xv[best]) best = idx;
          }
        const std::size_t o = (bc * oh + y) * ow + xx;
        out[o] = xv[best];
        argmax[o] = best;
      }
  const Shape in_shape = xv.shape();
  return push_op<T>(tape, OpKind::MaxPool, {x.id}, std::move(out),
                    [in_shape, argmax = std::move(argmax)](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      Tensor<T> dx(in_shape);
                      for (std::size_t i = 0; i < dout.size(); ++i) dx[argmax[i]] += dout[i];
                      return Errors<T>{std::move(dx)};
                    });
}

template <typename T>
Var avg_pool_global(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() != 4) throw DimensionError("avg_pool_global: expected 4-d input, got " + shape_string(xv.shape()));
  const auto view = channel_view(xv.shape());
  Tensor<T> out({view.outer, view.channels});
  for (std::size_t i = 0; i < view.outer * view.channels; ++i) {
    T s{0};
    for (std::size_t j = 0; j < view.inner; ++j) s += xv[i * view.inner + j];
    out[i] = s / static_cast<T>(view.inner);
  }
  const Shape in_shape = xv.shape();
  return push_op<T>(tape, OpKind::AvgPoolGlobal, {x.id}, std::move(out),
                    [in_shape, view](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      Tensor<T> dx(in_shape);
                      const T inv = T{1} / static_cast<T>(view.inner);
                      for (std::size_t i = 0; i < view.outer * view.channels; ++i)
                        for (std::size_t j = 0; j < view.inner; ++j) dx[i * view.inner + j] = dout[i] * inv;
                      return Errors<T>{std::move(dx)};
                    });
}

template <typename T>
Var flatten(Tape<T>& tape, Var x) {
  const auto& xv = tape.value(x);
  if (xv.rank() < 2) throw DimensionError("flatten: expected a batch axis, got " + shape_string(xv.shape()));
  const Shape in_shape = xv.shape();
  Tensor<T> out = xv.reshaped({xv.dim(0), xv.size() / xv.dim(0)});
  return push_op<T>(tape, OpKind::Flatten, {x.id}, std::move(out),
                    [in_shape](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      return Errors<T>{dout.reshaped(in_shape)};
                    });
}

template <typename T>
Var dropout(Tape<T>& tape, Var x, T p, std::uint64_t seed) {
  if (!(p >= T{0} && p < T{1})) throw ConfigError("dropout: probability must lie in [0, 1)");
  const auto& xv = tape.value(x);
  std::vector<T> mask(xv.size(), T{1});
  if (p > T{0}) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const T keep = T{1} / (T{1} - p);
    for (auto& m : mask) m = u(rng) < static_cast<double>(p) ? T{0} : keep;
  }
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  return push_op<T>(tape, OpKind::Dropout, {x.id}, std::move(out),
                    [mask = std::move(mask)](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      Tensor<T> dx = dout;
                      for (std::size_t i = 0; i < dx.size(); ++i) dx[i] *= mask[i];
                      return Errors<T>{std::move(dx)};
                    });
}

template <typename T>
Var add(Tape<T>& tape, Var a, Var b) {
  Tensor<T> out = tape.value(a);
  out += tape.value(b);
  return push_op<T>(tape, OpKind::Add, {a.id, b.id}, std::move(out),
                    [](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) {
                      return Errors<T>{dout, dout};
                    });
}

template <typename T>
Var scale_grad(Tape<T>& tape, Var x, T s) {
  if (!(s >= T{0} && s <= T{1}))
    throw ConfigError("scale_grad: factor " + std::to_string(static_cast<double>(s)) + " outside [0, 1]");
  Var v = push_op<T>(tape, OpKind::ScaleGrad, {x.id}, tape.value(x),
                     [](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) { return Errors<T>{dout}; });
  tape.node(v).grad_scale = s;
  return v;
}

template <typename T>
Var stop_grad(Tape<T>& tape, Var x) {
  Var v = push_op<T>(tape, OpKind::StopGrad, {x.id}, tape.value(x),
                     [](const TapeNode<T>&, const Tensor<T>& dout, const Tape<T>&) { return Errors<T>{dout}; });
  tape.node(v).barrier = true;
  return v;
}

#define BACKLINK_INSTANTIATE_TAPE(T)                                                                   \
  template struct Parameter<T>;                                                                        \
  template void accumulate<T>(GradMap<T>&, const Parameter<T>*, const Tensor<T>&, T);                  \
  template void accumulate<T>(GradMap<T>&, const GradMap<T>&, T);                                      \
  template class Adjoints<T>;                                                                          \
  template class Tape<T>;                                                                              \
  template Var input<T>(Tape<T>&, Tensor<T>);                                                          \
  template Var param<T>(Tape<T>&, Parameter<T>&);                                                      \
  template Var matmul<T>(Tape<T>&, Var, Var);                                                          \
  template Var transpose<T>(Tape<T>&, Var);                                                            \
  template Var add_bias<T>(Tape<T>&, Var, Var);                                                        \
  template Var conv2d<T>(Tape<T>&, Var, Var, std::size_t, std::size_t, ConvAlgo);                      \
  template Var relu<T>(Tape<T>&, Var);                                                                 \
  template Var batch_norm_train<T>(Tape<T>&, Var, Var, Var, T, BatchStats<T>*);                        \
  template Var batch_norm_eval<T>(Tape<T>&, Var, Var, Var, std::span<const T>, std::span<const T>, T); \
  template Var max_pool2x2<T>(Tape<T>&, Var);                                                          \
  template Var avg_pool_global<T>(Tape<T>&, Var);                                                      \
  template Var flatten<T>(Tape<T>&, Var);                                                              \
  template Var dropout<T>(Tape<T>&, Var, T, std::uint64_t);                                            \
  template Var add<T>(Tape<T>&, Var, Var);                                                             \
  template Var scale_grad<T>(Tape<T>&, Var, T);                                                        \
  template Var stop_grad<T>(Tape<T>&, Var);

BACKLINK_INSTANTIATE_TAPE(float)
BACKLINK_INSTANTIATE_TAPE(double)

}  // namespace backlink
