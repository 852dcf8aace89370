#pragma once

// Inner loops shared by the forward pass, backpropagation and relevance
// propagation. Every reduction runs in a fixed order so results are
// reproducible call to call.

#include <cstddef>
#include <cstdint>
#include <vector>

namespace rlvs::kernels {

struct ConvGeometry {
  std::uint32_t in_c = 0, in_h = 0, in_w = 0;
  std::uint32_t out_c = 0, out_h = 0, out_w = 0;
  std::uint32_t k = 1, s = 1, p = 0;

  std::size_t rows() const { return std::size_t{in_c} * k * k; }
  std::size_t cols() const { return std::size_t{out_h} * out_w; }
  std::size_t in_size() const { return std::size_t{in_c} * in_h * in_w; }
  std::size_t out_size() const { return std::size_t{out_c} * out_h * out_w; }
  // A 1x1/stride-1/unpadded convolution reads its input as the column matrix.
  bool is_pointwise() const { return k == 1 && s == 1 && p == 0; }
};

template <typename T>
inline void axpy(T* __restrict y, T a, const T* __restrict x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Eight interleaved partial sums combined pairwise.
template <typename T>
inline T dot(const T* __restrict a, const T* __restrict b, std::size_t n) {
  T acc[8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) acc[j] += a[i + j] * b[i + j];
  }
  T s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

// Four dot products of rows a, a+stride, a+2*stride, a+3*stride with b.
// Each result matches dot(row, b, n) exactly.
template <typename T>
inline void dot4(const T* __restrict a, std::size_t stride, const T* __restrict b,
                 std::size_t n, T* out) {
  T acc[4][8] = {};
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) {
      const T x = b[i + j];
      acc[0][j] += a[i + j] * x;
      acc[1][j] += a[stride + i + j] * x;
      acc[2][j] += a[2 * stride + i + j] * x;
      acc[3][j] += a[3 * stride + i + j] * x;
    }
  }
  for (int k = 0; k < 4; ++k) {
    const T* ak = a + k * stride;
    T s = ((acc[k][0] + acc[k][1]) + (acc[k][2] + acc[k][3])) +
          ((acc[k][4] + acc[k][5]) + (acc[k][6] + acc[k][7]));
    for (std::size_t t = i; t < n; ++t) s += ak[t] * b[t];
    out[k] = s;
  }
}

template <typename T>
void im2col(const T* in, const ConvGeometry& g, T* col) {
  const std::size_t n_cols = g.cols();
  for (std::uint32_t c = 0; c < g.in_c; ++c) {
    for (std::uint32_t ky = 0; ky < g.k; ++ky) {
      for (std::uint32_t kx = 0; kx < g.k; ++kx) {
        T* row = col + ((std::size_t{c} * g.k + ky) * g.k + kx) * n_cols;
        for (std::uint32_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.s + ky - g.p;
          T* dst = row + std::size_t{oy} * g.out_w;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) {
            for (std::uint32_t ox = 0; ox < g.out_w; ++ox) dst[ox] = T{0};
            continue;
          }
          const T* src = in + (std::size_t{c} * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          for (std::uint32_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.s + kx - g.p;
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.in_w)) ? T{0}
                                                                  : src[ix];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* in) {
  const std::size_t n_cols = g.cols();
  for (std::uint32_t c = 0; c < g.in_c; ++c) {
    for (std::uint32_t ky = 0; ky < g.k; ++ky) {
      for (std::uint32_t kx = 0; kx < g.k; ++kx) {
        const T* row = col + ((std::size_t{c} * g.k + ky) * g.k + kx) * n_cols;
        for (std::uint32_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = static_cast<long>(oy) * g.s + ky - g.p;
          if (iy < 0 || iy >= static_cast<long>(g.in_h)) continue;
          T* dst = in + (std::size_t{c} * g.in_h + static_cast<std::size_t>(iy)) * g.in_w;
          const T* src = row + std::size_t{oy} * g.out_w;
          for (std::uint32_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = static_cast<long>(ox) * g.s + kx - g.p;
            if (ix >= 0 && ix < static_cast<long>(g.in_w)) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

// out = W * im2col(in) (+ bias). W is (out_c, rows) row-major. Output
// channels are processed four at a time so each column row is loaded once
// per block; every output still accumulates over rows in order.
template <typename T, typename W>
void conv_forward(const T* in, const ConvGeometry& g, const W* weights,
                  const W* bias, T* out, std::vector<T>& scratch) {
  const std::size_t rows = g.rows();
  const std::size_t n = g.cols();
  const T* col = in;
  if (!g.is_pointwise()) {
    scratch.resize(rows * n);
    im2col(in, g, scratch.data());
    col = scratch.data();
  }
  std::uint32_t o = 0;
  for (; o + 4 <= g.out_c; o += 4) {
    T* __restrict d0 = out + std::size_t{o} * n;
    T* __restrict d1 = d0 + n;
    T* __restrict d2 = d1 + n;
    T* __restrict d3 = d2 + n;
    for (std::size_t j = 0; j < 4 * n; ++j) d0[j] = T{0};
    const W* w0 = weights + std::size_t{o} * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      const T a0 = static_cast<T>(w0[r]);
      const T a1 = static_cast<T>(w0[rows + r]);
      const T a2 = static_cast<T>(w0[2 * rows + r]);
      const T a3 = static_cast<T>(w0[3 * rows + r]);
      const T* __restrict c = col + r * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T x = c[j];
        d0[j] += a0 * x;
        d1[j] += a1 * x;
        d2[j] += a2 * x;
        d3[j] += a3 * x;
      }
    }
  }
  for (; o < g.out_c; ++o) {
    T* dst = out + std::size_t{o} * n;
    for (std::size_t j = 0; j < n; ++j) dst[j] = T{0};
    const W* wrow = weights + std::size_t{o} * rows;
    for (std::size_t r = 0; r < rows; ++r) {
      axpy(dst, static_cast<T>(wrow[r]), col + r * n, n);
    }
  }
  if (bias != nullptr) {
    for (std::uint32_t oc = 0; oc < g.out_c; ++oc) {
      const T b = static_cast<T>(bias[oc]);
      T* dst = out + std::size_t{oc} * n;
      for (std::size_t j = 0; j < n; ++j) dst[j] += b;
    }
  }
}

// Column-space gradient: dcol[r] = sum over o (in order) of W[o,r] * g[o].
template <typename T, typename W>
void weights_transpose_times(const T* grad_out, const ConvGeometry& g,
                             const W* weights, T* dcol) {
  const std::size_t rows = g.rows();
  const std::size_t n = g.cols();
  std::size_t r = 0;
  for (; r + 4 <= rows; r += 4) {
    T* __restrict d0 = dcol + r * n;
    T* __restrict d1 = d0 + n;
    T* __restrict d2 = d1 + n;
    T* __restrict d3 = d2 + n;
    for (std::uint32_t o = 0; o < g.out_c; ++o) {
      const W* wrow = weights + std::size_t{o} * rows + r;
      const T a0 = static_cast<T>(wrow[0]);
      const T a1 = static_cast<T>(wrow[1]);
      const T a2 = static_cast<T>(wrow[2]);
      const T a3 = static_cast<T>(wrow[3]);
      const T* __restrict src = grad_out + std::size_t{o} * n;
      for (std::size_t j = 0; j < n; ++j) {
        const T x = src[j];
        d0[j] += a0 * x;
        d1[j] += a1 * x;
        d2[j] += a2 * x;
        d3[j] += a3 * x;
      }
    }
  }
  for (; r < rows; ++r) {
    for (std::uint32_t o = 0; o < g.out_c; ++o) {
      axpy(dcol + r * n, static_cast<T>(weights[std::size_t{o} * rows + r]),
           grad_out + std::size_t{o} * n, n);
    }
  }
}

// grad_in += W^T * grad_out, scattered back through col2im.
template <typename T, typename W>
void conv_backward_data(const T* grad_out, const ConvGeometry& g,
                        const W* weights, T* grad_in, std::vector<T>& scratch) {
  if (g.is_pointwise()) {
    weights_transpose_times(grad_out, g, weights, grad_in);
    return;
  }
  scratch.assign(g.rows() * g.cols(), T{0});
  weights_transpose_times(grad_out, g, weights, scratch.data());
  col2im_add(scratch.data(), g, grad_in);
}

// dW += grad_out * im2col(in)^T, db += row sums of grad_out.
template <typename T>
void conv_backward_weights(const T* grad_out, const T* in, const ConvGeometry& g,
                           T* dw, T* db, std::vector<T>& scratch) {
  const std::size_t rows = g.rows();
  const std::size_t n = g.cols();
  const T* col = in;
  if (!g.is_pointwise()) {
    scratch.resize(rows * n);
    im2col(in, g, scratch.data());
    col = scratch.data();
  }
  std::uint32_t o = 0;
  for (; o + 4 <= g.out_c; o += 4) {
    const T* g0 = grad_out + std::size_t{o} * n;
    for (std::size_t r = 0; r < rows; ++r) {
      T out4[4];
      dot4(g0, n, col + r * n, n, out4);
      for (int i = 0; i < 4; ++i) dw[(std::size_t{o} + i) * rows + r] += out4[i];
    }
  }
  for (; o < g.out_c; ++o) {
    const T* grow = grad_out + std::size_t{o} * n;
    T* dwrow = dw + std::size_t{o} * rows;
    for (std::size_t r = 0; r < rows; ++r) dwrow[r] += dot(grow, col + r * n, n);
  }
  for (std::uint32_t oc = 0; oc < g.out_c; ++oc) {
    const T* grow = grad_out + std::size_t{oc} * n;
    T s = T{0};
    for (std::size_t j = 0; j < n; ++j) s += grow[j];
    db[oc] += s;
  }
}

// Dense layer: out[o] = sum_i W[o,i] x[i] (+ b[o]).
template <typename T, typename W>
void dense_forward(const T* x, std::size_t in, const W* weights, const W* bias,
                   std::size_t out_n, T* out) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const W* wrow = weights + o * in;
    T acc = T{0};
    for (std::size_t i = 0; i < in; ++i) acc += static_cast<T>(wrow[i]) * x[i];
    out[o] = bias != nullptr ? acc + static_cast<T>(bias[o]) : acc;
  }
}

// grad_x += W^T g.
template <typename T, typename W>
void dense_backward_data(const T* g, std::size_t in, const W* weights,
                         std::size_t out_n, T* grad_x) {
  for (std::size_t o = 0; o < out_n; ++o) {
    const T a = g[o];
    if (a == T{0}) continue;
    const W* wrow = weights + o * in;
    for (std::size_t i = 0; i < in; ++i) grad_x[i] += a * static_cast<T>(wrow[i]);
  }
}

}  // namespace rlvs::kernels
