// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "srdl/graph.hpp"
#include "srdl/tensor.hpp"

namespace srdl {

namespace kernels {

// c[m x n] += a[m x k] * b[k x n]; returns the number of multiply-adds times 2.
template <typename T>
std::uint64_t gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
      flops += 2 * n;
    }
  }
  return flops;
}

// c[k x n] += a[m x k]^T * b[m x n]
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* brow = b + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      T* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

template <typename T>
std::vector<T> transpose(std::size_t rows, std::size_t cols, const T* a) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = a[r * cols + c];
  return out;
}

}  // namespace kernels

/// c = a * b for a[m x k], b[k x n].
template <typename T>
Var matmul(Graph<T>& g, Var a, Var b) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.rank() != 2 || bv.rank() != 2 || av.dim(1) != bv.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(av.shape()) + " by " +
                         shape_str(bv.shape()));
  }
  const std::size_t m = av.dim(0), k = av.dim(1), n = bv.dim(1);
  Tensor<T> out({m, n});
  g.add_flops(kernels::gemm_nn(m, k, n, av.data().data(), bv.data().data(), out.data().data()));
  return g.record(std::move(out), {a, b}, [a, b, m, k, n](Graph<T>& gr, const Tensor<T>& dc) {
    const auto& av = gr.value(a);
    const auto& bv = gr.value(b);
    if (gr.requires_grad(a)) {
      auto bt = kernels::transpose(k, n, bv.data().data());
      kernels::gemm_nn(m, n, k, dc.data().data(), bt.data(), gr.grad_buffer(a).data().data());
    }
    if (gr.requires_grad(b)) {
      kernels::gemm_tn(m, k, n, av.data().data(), dc.data().data(),
                       gr.grad_buffer(b).data().data());
    }
  });
}

/// Row-wise broadcast of b[n] onto x[m x n].
template <typename T>
Var add_bias(Graph<T>& g, Var x, Var b) {
  const auto& xv = g.value(x);
  const auto& bv = g.value(b);
  if (xv.rank() != 2 || bv.rank() != 1 || xv.dim(1) != bv.dim(0)) {
    throw DimensionError("add_bias: bias " + shape_str(bv.shape()) + " does not match " +
                         shape_str(xv.shape()));
  }
  const std::size_t m = xv.dim(0), n = xv.dim(1);
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[i * n + j] += bv[j];
  g.add_flops(m * n);
  return g.record(std::move(out), {x, b}, [x, b, m, n](Graph<T>& gr, const Tensor<T>& dy) {
    if (gr.requires_grad(x)) {
      auto& gx = gr.grad_buffer(x);
      for (std::size_t i = 0; i < m * n; ++i) gx[i] += dy[i];
    }
    if (gr.requires_grad(b)) {
      auto& gb = gr.grad_buffer(b);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) gb[j] += dy[i * n + j];
    }
  });
}

/// Elementwise max(0, x). The gradient at exactly 0 is 0.
template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> out = g.value(x);
  for (auto& v : out.data()) v = v > T(0) ? v : T(0);
  g.add_flops(out.size());
  return g.record(std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& dy) {
    const auto& xv = gr.value(x);
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < xv.size(); ++i)
      if (xv[i] > T(0)) gx[i] += dy[i];
  });
}

struct Conv2dGeometry {
  std::size_t batch, cin, h, w, cout, kh, kw, stride, pad, oh, ow;
};

inline Conv2dGeometry conv2d_geometry(const Shape& x, const Shape& k, std::size_t stride,
                                      std::size_t pad) {
  if (x.size() != 4 || k.size() != 4 || x[1] != k[1]) {
    throw DimensionError("conv2d: input " + shape_str(x) + " incompatible with kernels " +
                         shape_str(k));
  }
  if (stride < 1) throw ContractError("conv2d: stride must be >= 1");
  if (k[2] > x[2] + 2 * pad || k[3] > x[3] + 2 * pad) {
    throw DimensionError("conv2d: kernel " + shape_str(k) + " larger than padded input " +
                         shape_str(x) + " with pad " + std::to_string(pad));
  }
  Conv2dGeometry geo{x[0], x[1], x[2], x[3], k[0], k[2], k[3], stride, pad, 0, 0};
  geo.oh = (geo.h + 2 * pad - geo.kh) / stride + 1;
  geo.ow = (geo.w + 2 * pad - geo.kw) / stride + 1;
  return geo;
}

/**
 * Zero-padded cross-correlation of x[batch x cin x h x w] with
 * kernels[cout x cin x kh x kw]. Direct loops; every kernel tap is visited,
 * padded taps read zero.
 */
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var kernels, std::size_t stride, std::size_t pad) {
  const auto& xv = g.value(x);
  const auto& kv = g.value(kernels);
  const auto geo = conv2d_geometry(xv.shape(), kv.shape(), stride, pad);
  Tensor<T> out({geo.batch, geo.cout, geo.oh, geo.ow});
  std::uint64_t flops = 0;
  const auto ipad = static_cast<std::ptrdiff_t>(pad);
  for (std::size_t b = 0; b < geo.batch; ++b) {
    for (std::size_t co = 0; co < geo.cout; ++co) {
      for (std::size_t oy = 0; oy < geo.oh; ++oy) {
        for (std::size_t ox = 0; ox < geo.ow; ++ox) {
          T acc = 0;
          for (std::size_t ci = 0; ci < geo.cin; ++ci) {
            for (std::size_t ky = 0; ky < geo.kh; ++ky) {
              const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - ipad;
              for (std::size_t kx = 0; kx < geo.kw; ++kx) {
                const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - ipad;
                const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(geo.h) &&
                                    ix < static_cast<std::ptrdiff_t>(geo.w);
                const T xval =
                    inside ? xv[((b * geo.cin + ci) * geo.h + iy) * geo.w + ix] : T(0);
                acc += xval * kv[((co * geo.cin + ci) * geo.kh + ky) * geo.kw + kx];
                flops += 2;
              }
            }
          }
          out[((b * geo.cout + co) * geo.oh + oy) * geo.ow + ox] = acc;
        }
      }
    }
  }
  g.add_flops(flops);
  return g.record(std::move(out), {x, kernels}, [x, kernels, geo](Graph<T>& gr,
                                                                   const Tensor<T>& dy) {
    const auto& xv = gr.value(x);
    const auto& kv = gr.value(kernels);
    T* gx = gr.requires_grad(x) ? gr.grad_buffer(x).data().data() : nullptr;
    T* gk = gr.requires_grad(kernels) ? gr.grad_buffer(kernels).data().data() : nullptr;
    const auto ipad = static_cast<std::ptrdiff_t>(geo.pad);
    for (std::size_t b = 0; b < geo.batch; ++b) {
      for (std::size_t co = 0; co < geo.cout; ++co) {
        for (std::size_t oy = 0; oy < geo.oh; ++oy) {
          for (std::size_t ox = 0; ox < geo.ow; ++ox) {
            const T d = dy[((b * geo.cout + co) * geo.oh + oy) * geo.ow + ox];
            for (std::size_t ci = 0; ci < geo.cin; ++ci) {
              for (std::size_t ky = 0; ky < geo.kh; ++ky) {
                const auto iy = static_cast<std::ptrdiff_t>(oy * geo.stride + ky) - ipad;
                if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(geo.h)) continue;
                for (std::size_t kx = 0; kx < geo.kw; ++kx) {
                  const auto ix = static_cast<std::ptrdiff_t>(ox * geo.stride + kx) - ipad;
                  if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(geo.w)) continue;
                  const std::size_t xi = ((b * geo.cin + ci) * geo.h + iy) * geo.w + ix;
                  const std::size_t ki = ((co * geo.cin + ci) * geo.kh + ky) * geo.kw + kx;
                  if (gx) gx[xi] += d * kv[ki];
                  if (gk) gk[ki] += d * xv[xi];
                }
              }
            }
          }
        }
      }
    }
  });
}

/// Spatial mean per channel: [batch x c x h x w] -> [batch x c].
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
  const auto& xv = g.value(x);
  if (xv.rank() != 4) throw DimensionError("global_avg_pool expects rank 4, got " +
                                           shape_str(xv.shape()));
  const std::size_t b = xv.dim(0), c = xv.dim(1), hw = xv.dim(2) * xv.dim(3);
  Tensor<T> out({b, c});
  std::uint64_t flops = 0;
  for (std::size_t i = 0; i < b * c; ++i) {
    T acc = 0;
    for (std::size_t s = 0; s < hw; ++s) acc += xv[i * hw + s];
    out[i] = acc / static_cast<T>(hw);
    flops += hw + 1;
  }
  g.add_flops(flops);
  return g.record(std::move(out), {x}, [x, b, c, hw](Graph<T>& gr, const Tensor<T>& dy) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < b * c; ++i) {
      const T share = dy[i] / static_cast<T>(hw);
      for (std::size_t s = 0; s < hw; ++s) gx[i * hw + s] += share;
    }
  });
}

/// Sum of all elements into a one-element tensor. Used to scalarize probes.
template <typename T>
Var sum_all(Graph<T>& g, Var x) {
  T acc = 0;
  for (T v : g.value(x).data()) acc += v;
  return g.record(Tensor<T>({1}, {acc}), {x}, [x](Graph<T>& gr, const Tensor<T>& dy) {
    auto& gx = gr.grad_buffer(x);
    for (auto& v : gx.data()) v += dy[0];
  });
}

/// Elementwise product with a constant tensor of the same shape.
template <typename T>
Var mul_const(Graph<T>& g, Var x, const Tensor<T>& weights) {
  const auto& xv = g.value(x);
  if (xv.shape() != weights.shape()) {
    throw DimensionError("mul_const: " + shape_str(xv.shape()) + " vs " +
                         shape_str(weights.shape()));
  }
  Tensor<T> out = xv;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= weights[i];
  return g.record(std::move(out), {x}, [x, weights](Graph<T>& gr, const Tensor<T>& dy) {
    auto& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i] * weights[i];
  });
}

/// a + weight * b for one-element tensors.
template <typename T>
Var weighted_sum(Graph<T>& g, Var a, Var b, T weight) {
  const auto& av = g.value(a);
  const auto& bv = g.value(b);
  if (av.size() != 1 || bv.size() != 1) throw DimensionError("weighted_sum expects scalars");
  return g.record(Tensor<T>({1}, {av[0] + weight * bv[0]}), {a, b},
                  [a, b, weight](Graph<T>& gr, const Tensor<T>& dy) {
                    if (gr.requires_grad(a)) gr.grad_buffer(a)[0] += dy[0];
                    if (gr.requires_grad(b)) gr.grad_buffer(b)[0] += weight * dy[0];
                  });
}

/// Reinterprets x under a new shape of equal size.
template <typename T>
Var reshape(Graph<T>& g, Var x, Shape shape) {
  return g.record(g.value(x).reshaped(std::move(shape)), {x},
                  [x](Graph<T>& gr, const Tensor<T>& dy) {
                    auto& gx = gr.grad_buffer(x);
                    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += dy[i];
                  });
}

}  // namespace srdl
