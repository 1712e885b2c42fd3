#include "fsn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <stdexcept>
#include <string>

namespace fsn {

namespace {

// y[0..n) += a * x[0..n)
template <typename T>
inline void axpy(std::size_t n, T a, const T* __restrict x, T* __restrict y) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

template <typename T>
struct Vec32 {
  typedef T type __attribute__((vector_size(32)));
};

// 4 x (NV * lanes) block of C kept in registers over a packed B panel.
template <typename T, int NV>
inline void gemm_tile(std::size_t kb, const T* a, std::size_t a_row, std::size_t a_col,
                      const T* panel, T* c, std::size_t ldc, bool skip_zero) {
  using V = typename Vec32<T>::type;
  constexpr std::size_t L = sizeof(V) / sizeof(T);
  V c00, c10, c20, c30, c01, c11, c21, c31;
  std::memcpy(&c00, c, sizeof(V));
  std::memcpy(&c10, c + ldc, sizeof(V));
  std::memcpy(&c20, c + 2 * ldc, sizeof(V));
  std::memcpy(&c30, c + 3 * ldc, sizeof(V));
  if constexpr (NV == 2) {
    std::memcpy(&c01, c + L, sizeof(V));
    std::memcpy(&c11, c + ldc + L, sizeof(V));
    std::memcpy(&c21, c + 2 * ldc + L, sizeof(V));
    std::memcpy(&c31, c + 3 * ldc + L, sizeof(V));
  }
  for (std::size_t k = 0; k < kb; ++k, panel += NV * L) {
    const T a0 = a[k * a_col], a1 = a[a_row + k * a_col];
    const T a2 = a[2 * a_row + k * a_col], a3 = a[3 * a_row + k * a_col];
    if (skip_zero && a0 == T(0) && a1 == T(0) && a2 == T(0) && a3 == T(0)) continue;
    V b0;
    std::memcpy(&b0, panel, sizeof(V));
    c00 += a0 * b0;
    c10 += a1 * b0;
    c20 += a2 * b0;
    c30 += a3 * b0;
    if constexpr (NV == 2) {
      V b1;
      std::memcpy(&b1, panel + L, sizeof(V));
      c01 += a0 * b1;
      c11 += a1 * b1;
      c21 += a2 * b1;
      c31 += a3 * b1;
    }
  }
  std::memcpy(c, &c00, sizeof(V));
  std::memcpy(c + ldc, &c10, sizeof(V));
  std::memcpy(c + 2 * ldc, &c20, sizeof(V));
  std::memcpy(c + 3 * ldc, &c30, sizeof(V));
  if constexpr (NV == 2) {
    std::memcpy(c + L, &c01, sizeof(V));
    std::memcpy(c + ldc + L, &c11, sizeof(V));
    std::memcpy(c + 2 * ldc + L, &c21, sizeof(V));
    std::memcpy(c + 3 * ldc + L, &c31, sizeof(V));
  }
}

// C[M x N] += A[M x K] * B[K x N]; A is addressed as A[i * a_row + k * a_col], B and C
// are row-major with leading dimensions ldb and ldc. Every C element accumulates
// over k = 0..K-1 in order, so the result matches a plain triple loop bit for bit.
// Zero entries of A may be skipped when skip_zero is set.
template <typename T>
void gemm_acc(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t a_row,
              std::size_t a_col, const T* B, std::size_t ldb, T* C, std::size_t ldc,
              bool skip_zero = false) {
  constexpr std::size_t kLanes = sizeof(typename Vec32<T>::type) / sizeof(T);
  constexpr std::size_t kKb = 256;
  const std::size_t n_wide = N - N % (2 * kLanes);
  const std::size_t n_vec = N - N % kLanes;
  const std::size_t m_tiled = M - M % 4;
  std::vector<T> panel(kKb * 2 * kLanes);
  for (std::size_t k0 = 0; k0 < K; k0 += kKb) {
    const std::size_t kb = std::min(kKb, K - k0);
    for (std::size_t j = 0; j < n_vec;) {
      const std::size_t width = j < n_wide ? 2 * kLanes : kLanes;
      for (std::size_t k = 0; k < kb; ++k) {
        std::memcpy(panel.data() + k * width, B + (k0 + k) * ldb + j, width * sizeof(T));
      }
      for (std::size_t i = 0; i < m_tiled; i += 4) {
        const T* a = A + i * a_row + k0 * a_col;
        T* c = C + i * ldc + j;
        if (width == 2 * kLanes) {
          gemm_tile<T, 2>(kb, a, a_row, a_col, panel.data(), c, ldc, skip_zero);
        } else {
          gemm_tile<T, 1>(kb, a, a_row, a_col, panel.data(), c, ldc, skip_zero);
        }
      }
      j += width;
    }
    // leftover columns of the row blocks, then leftover rows
    if (n_vec < N) {
      for (std::size_t i = 0; i < m_tiled; ++i) {
        T* c = C + i * ldc;
        for (std::size_t k = k0; k < k0 + kb; ++k) {
          const T av = A[i * a_row + k * a_col];
          const T* b = B + k * ldb;
          for (std::size_t jj = n_vec; jj < N; ++jj) c[jj] += av * b[jj];
        }
      }
    }
    for (std::size_t i = m_tiled; i < M; ++i) {
      T* c = C + i * ldc;
      for (std::size_t k = k0; k < k0 + kb; ++k) {
        const T av = A[i * a_row + k * a_col];
        if (skip_zero && av == T(0)) continue;
        axpy(N, av, B + k * ldb, c);
      }
    }
  }
}

// dst[j * rows + i] = src[i * cols + j]
template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
  constexpr std::size_t kB = 32;
  for (std::size_t i0 = 0; i0 < rows; i0 += kB) {
    const std::size_t i1 = std::min(rows, i0 + kB);
    for (std::size_t j0 = 0; j0 < cols; j0 += kB) {
      const std::size_t j1 = std::min(cols, j0 + kB);
      for (std::size_t i = i0; i < i1; ++i) {
        for (std::size_t j = j0; j < j1; ++j) dst[j * rows + i] = src[i * cols + j];
      }
    }
  }
}

struct ConvGeometry {
  std::size_t c_in, k, h, w, ho, wo;
  int stride, padding, dr, dc;

  std::size_t rows() const { return c_in * k * k; }
  std::size_t cols() const { return ho * wo; }
  // A 1x1, unit-stride, unpadded, unshifted conv reads the input plane directly.
  bool direct() const { return k == 1 && stride == 1 && padding == 0 && dr == 0 && dc == 0; }
};

template <typename T>
ConvGeometry geometry(const Tensor4<T>& x, const ConvParams<T>& p) {
  if (p.kernel.c() != x.c()) {
    throw std::invalid_argument("conv2d: kernel expects " + std::to_string(p.kernel.c()) +
                                " input channels, got " + std::to_string(x.c()));
  }
  if (p.kernel.h() != p.kernel.w()) throw std::invalid_argument("conv2d: kernel must be square");
  if (p.bias.size() != p.kernel.n()) throw std::invalid_argument("conv2d: bias length mismatch");
  if (p.stride < 1 || p.padding < 0) throw std::invalid_argument("conv2d: bad stride/padding");
  const Shape4 out = conv_output_shape(x.shape(), p.kernel.n(), p.kernel.h(), p.stride, p.padding);
  return {x.c(),    p.kernel.h(), x.h(),     x.w(),         out.h,
          out.w,    p.stride,     p.padding, p.offset.dr, p.offset.dc};
}

// col is rows() x cols(); row r = (ci * k + u) * k + v.
template <typename T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const long H = static_cast<long>(g.h);
  const long W = static_cast<long>(g.w);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    const T* plane = img + ci * g.h * g.w;
    for (std::size_t u = 0; u < g.k; ++u) {
      for (std::size_t v = 0; v < g.k; ++v) {
        T* dst = col + ((ci * g.k + u) * g.k + v) * g.cols();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.padding + static_cast<long>(u) + g.dr;
          T* row = dst + oi * g.wo;
          if (ii < 0 || ii >= H) {
            std::fill(row, row + g.wo, T(0));
            continue;
          }
          const T* src = plane + ii * W;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj =
                static_cast<long>(oj) * g.stride - g.padding + static_cast<long>(v) + g.dc;
            row[oj] = (jj < 0 || jj >= W) ? T(0) : src[jj];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* img) {
  const long H = static_cast<long>(g.h);
  const long W = static_cast<long>(g.w);
  for (std::size_t ci = 0; ci < g.c_in; ++ci) {
    T* plane = img + ci * g.h * g.w;
    for (std::size_t u = 0; u < g.k; ++u) {
      for (std::size_t v = 0; v < g.k; ++v) {
        const T* src = col + ((ci * g.k + u) * g.k + v) * g.cols();
        for (std::size_t oi = 0; oi < g.ho; ++oi) {
          const long ii = static_cast<long>(oi) * g.stride - g.padding + static_cast<long>(u) + g.dr;
          if (ii < 0 || ii >= H) continue;
          T* dst = plane + ii * W;
          const T* row = src + oi * g.wo;
          for (std::size_t oj = 0; oj < g.wo; ++oj) {
            const long jj =
                static_cast<long>(oj) * g.stride - g.padding + static_cast<long>(v) + g.dc;
            if (jj >= 0 && jj < W) dst[jj] += row[oj];
          }
        }
      }
    }
  }
}

}  // namespace

Shape4 conv_output_shape(const Shape4& x, std::size_t c_out, std::size_t k, int stride,
                         int padding) {
  const long span_h = static_cast<long>(x.h) + 2L * padding - static_cast<long>(k);
  const long span_w = static_cast<long>(x.w) + 2L * padding - static_cast<long>(k);
  if (span_h < 0 || span_w < 0) throw std::invalid_argument("conv2d: input smaller than kernel");
  return {x.n, c_out, static_cast<std::size_t>(span_h / stride + 1),
          static_cast<std::size_t>(span_w / stride + 1)};
}

template <typename T>
ConvParams<T> make_conv(std::size_t c_out, std::size_t c_in, std::size_t k, int stride,
                        int padding, Offset2 offset) {
  ConvParams<T> p;
  p.kernel = Tensor4<T>({c_out, c_in, k, k});
  p.bias = Tensor4<T>({c_out, 1, 1, 1});
  p.stride = stride;
  p.padding = padding < 0 ? static_cast<int>(k / 2) : padding;
  p.offset = offset;
  return p;
}

template <typename T>
FcParams<T> make_fc(std::size_t d_out, std::size_t d_in) {
  return {Tensor4<T>({d_out, d_in, 1, 1}), Tensor4<T>({d_out, 1, 1, 1})};
}

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
  const ConvGeometry g = geometry(x, p);
  const std::size_t c_out = p.c_out();
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  Tensor4<T> out({x.n(), c_out, g.ho, g.wo});
  std::vector<T> col(g.direct() ? 0 : K * P);
  const T* wk = p.kernel.ptr();
  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = x.plane(n, 0);
    if (!g.direct()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    T* dst = out.plane(n, 0);
    // every output accumulates over r = 0..K-1 in order, then adds the bias
    gemm_acc(c_out, P, K, wk, K, std::size_t{1}, src, P, dst, P);
    for (std::size_t co = 0; co < c_out; ++co) {
      const T b = p.bias[co];
      T* y = dst + co * P;
      for (std::size_t i = 0; i < P; ++i) y[i] += b;
    }
  }
  return out;
}

template <typename T>
Tensor4<T> shifted_conv2d(const Tensor4<T>& x, const ConvParams<T>& p) {
  if (p.kernel.h() != 3 || p.kernel.w() != 3) {
    throw std::invalid_argument("shifted_conv2d: kernel must be 3x3");
  }
  if (std::abs(p.offset.dr) > 2 || std::abs(p.offset.dc) > 2) {
    throw std::invalid_argument("shifted_conv2d: offset (" + std::to_string(p.offset.dr) + ", " +
                                std::to_string(p.offset.dc) + ") exceeds the 2-cell limit");
  }
  return conv2d(x, p);
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p,
                             const Tensor4<T>& grad_out) {
  const ConvGeometry g = geometry(x, p);
  const std::size_t c_out = p.c_out();
  const std::size_t K = g.rows();
  const std::size_t P = g.cols();
  require_same_shape(grad_out.shape(), Shape4{x.n(), c_out, g.ho, g.wo}, "conv2d_backward");

  ConvGrads<T> grads{Tensor4<T>(x.shape()), Tensor4<T>(p.kernel.shape()),
                     Tensor4<T>(p.bias.shape())};
  std::vector<T> col(g.direct() ? 0 : K * P);
  std::vector<T> dy_t(P * c_out);
  std::vector<T> dw_t(K * c_out, T(0));
  std::vector<T> dcol(K * P);
  const T* wk = p.kernel.ptr();
  T* dw = grads.dkernel.ptr();

  for (std::size_t n = 0; n < x.n(); ++n) {
    const T* src = x.plane(n, 0);
    if (!g.direct()) {
      im2col(src, g, col.data());
      src = col.data();
    }
    const T* dy = grad_out.plane(n, 0);

    for (std::size_t co = 0; co < c_out; ++co) {
      T acc = 0;
      const T* d = dy + co * P;
      for (std::size_t i = 0; i < P; ++i) acc += d[i];
      grads.dbias[co] += acc;
    }

    // dW^T[r, co] += sum_i col[r, i] * dy[co, i]
    transpose(dy, c_out, P, dy_t.data());
    gemm_acc(K, c_out, P, src, P, std::size_t{1}, dy_t.data(), c_out, dw_t.data(), c_out);

    // dcol[r, :] = sum_co W[co, r] * dy[co, :]
    std::fill(dcol.begin(), dcol.end(), T(0));
    gemm_acc(K, P, c_out, wk, std::size_t{1}, K, dy, P, dcol.data(), P);
    T* dx = grads.dx.plane(n, 0);
    if (g.direct()) {
      std::copy(dcol.begin(), dcol.end(), dx);
    } else {
      col2im_add(dcol.data(), g, dx);
    }
  }
  transpose(dw_t.data(), K, c_out, dw);
  return grads;
}

template <typename T>
Tensor4<T> fully_connected(const Tensor4<T>& x, const FcParams<T>& p) {
  const std::size_t rows = x.n();
  const std::size_t d_in = x.c() * x.h() * x.w();
  const std::size_t d_out = p.d_out();
  if (d_in != p.d_in()) {
    throw std::invalid_argument("fully_connected: input length " + std::to_string(d_in) +
                                " != d_in " + std::to_string(p.d_in()));
  }
  // W^T so the inner loop runs over contiguous outputs
  std::vector<T> wt(d_in * d_out);
  transpose(p.weight.ptr(), d_out, d_in, wt.data());
  Tensor4<T> out({rows, d_out, 1, 1});
  gemm_acc(rows, d_out, d_in, x.ptr(), d_in, std::size_t{1}, wt.data(), d_out, out.ptr(), d_out);
  for (std::size_t r = 0; r < rows; ++r) {
    T* y = out.ptr() + r * d_out;
    for (std::size_t o = 0; o < d_out; ++o) y[o] += p.bias[o];
  }
  return out;
}

template <typename T>
FcGrads<T> fully_connected_backward(const Tensor4<T>& x, const FcParams<T>& p,
                                    const Tensor4<T>& grad_out) {
  const std::size_t rows = x.n();
  const std::size_t d_in = x.c() * x.h() * x.w();
  const std::size_t d_out = p.d_out();
  if (d_in != p.d_in()) throw std::invalid_argument("fully_connected_backward: d_in mismatch");
  require_same_shape(grad_out.shape(), Shape4{rows, d_out, 1, 1}, "fully_connected_backward");

  FcGrads<T> g{Tensor4<T>(x.shape()), Tensor4<T>(p.weight.shape()), Tensor4<T>(p.bias.shape())};
  const T* dy = grad_out.ptr();
  // dx = dY W, dW = dY^T X
  gemm_acc(rows, d_in, d_out, dy, d_out, std::size_t{1}, p.weight.ptr(), d_in, g.dx.ptr(), d_in, true);
  gemm_acc(d_out, d_in, rows, dy, std::size_t{1}, d_out, x.ptr(), d_in, g.dweight.ptr(), d_in, true);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t o = 0; o < d_out; ++o) g.dbias[o] += dy[r * d_out + o];
  }
  return g;
}

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out) {
  require_same_shape(x.shape(), grad_out.shape(), "relu_backward");
  Tensor4<T> dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = x[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x) {
  Tensor4<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = T(1) / (T(1) + std::exp(-x[i]));
  return out;
}

template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out) {
  require_same_shape(y.shape(), grad_out.shape(), "sigmoid_backward");
  Tensor4<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = grad_out[i] * y[i] * (T(1) - y[i]);
  return dx;
}

namespace {

template <typename T>
T log_softmax_row(const T* z, std::size_t k, T* probs_out) {
  T zmax = z[0];
  for (std::size_t j = 1; j < k; ++j) zmax = std::max(zmax, z[j]);
  T denom = 0;
  for (std::size_t j = 0; j < k; ++j) denom += std::exp(z[j] - zmax);
  if (probs_out != nullptr) {
    for (std::size_t j = 0; j < k; ++j) probs_out[j] = std::exp(z[j] - zmax) / denom;
  }
  return zmax + std::log(denom);
}

void check_label(int label, std::size_t classes) {
  if (label < 0 || static_cast<std::size_t>(label) >= classes) {
    throw std::invalid_argument("softmax_cross_entropy: label " + std::to_string(label) +
                                " outside [0, " + std::to_string(classes) + ")");
  }
}

}  // namespace

template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor4<T>& logits, std::span<const int> labels) {
  const std::size_t rows = logits.n();
  const std::size_t k = logits.c() * logits.h() * logits.w();
  if (labels.size() != rows) throw std::invalid_argument("softmax_cross_entropy: label count");
  SoftmaxLoss<T> res{0, Tensor4<T>(logits.shape())};
  if (rows == 0) return res;
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    check_label(labels[r], k);
    const T* z = logits.ptr() + r * k;
    const T lse = log_softmax_row(z, k, res.probs.ptr() + r * k);
    total += lse - z[labels[r]];
  }
  res.loss = total / static_cast<T>(rows);
  return res;
}

template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label) {
  check_label(label, logits.size());
  return log_softmax_row(logits.data(), logits.size(), static_cast<T*>(nullptr)) -
         logits[static_cast<std::size_t>(label)];
}

template <typename T>
Tensor4<T> softmax_cross_entropy_backward(const Tensor4<T>& probs, std::span<const int> labels) {
  const std::size_t rows = probs.n();
  const std::size_t k = probs.c() * probs.h() * probs.w();
  Tensor4<T> d = probs;
  d.drop_grad();
  if (rows == 0) return d;
  const T scale = T(1) / static_cast<T>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    T* dr = d.ptr() + r * k;
    dr[labels[r]] -= T(1);
    for (std::size_t j = 0; j < k; ++j) dr[j] *= scale;
  }
  return d;
}

template <typename T>
T smooth_l1_scalar(T d) {
  const T a = std::abs(d);
  return a < T(1) ? T(0.5) * d * d : a - T(0.5);
}

template <typename T>
T smooth_l1(const Tensor4<T>& pred, const Tensor4<T>& target, std::span<const T> row_weight) {
  require_same_shape(pred.shape(), target.shape(), "smooth_l1");
  const std::size_t rows = pred.n();
  const std::size_t k = pred.size() / std::max<std::size_t>(rows, 1);
  if (!row_weight.empty() && row_weight.size() != rows) {
    throw std::invalid_argument("smooth_l1: row weight count");
  }
  T total = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    const T wr = row_weight.empty() ? T(1) : row_weight[r];
    if (wr == T(0)) continue;
    T acc = 0;
    for (std::size_t j = 0; j < k; ++j) acc += smooth_l1_scalar(pred[r * k + j] - target[r * k + j]);
    total += wr * acc;
  }
  return total;
}

template <typename T>
Tensor4<T> smooth_l1_backward(const Tensor4<T>& pred, const Tensor4<T>& target,
                              std::span<const T> row_weight) {
  require_same_shape(pred.shape(), target.shape(), "smooth_l1_backward");
  const std::size_t rows = pred.n();
  const std::size_t k = pred.size() / std::max<std::size_t>(rows, 1);
  Tensor4<T> d(pred.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T wr = row_weight.empty() ? T(1) : row_weight[r];
    for (std::size_t j = 0; j < k; ++j) {
      const T diff = pred[r * k + j] - target[r * k + j];
      const T g = std::abs(diff) < T(1) ? diff : (diff > T(0) ? T(1) : T(-1));
      d[r * k + j] = wr * g;
    }
  }
  return d;
}

#define FSN_INSTANTIATE(T)                                                                      \
  template ConvParams<T> make_conv<T>(std::size_t, std::size_t, std::size_t, int, int, Offset2); \
  template FcParams<T> make_fc<T>(std::size_t, std::size_t);                                    \
  template Tensor4<T> conv2d(const Tensor4<T>&, const ConvParams<T>&);                          \
  template Tensor4<T> shifted_conv2d(const Tensor4<T>&, const ConvParams<T>&);                  \
  template ConvGrads<T> conv2d_backward(const Tensor4<T>&, const ConvParams<T>&,                \
                                        const Tensor4<T>&);                                     \
  template Tensor4<T> fully_connected(const Tensor4<T>&, const FcParams<T>&);                   \
  template FcGrads<T> fully_connected_backward(const Tensor4<T>&, const FcParams<T>&,           \
                                               const Tensor4<T>&);                              \
  template Tensor4<T> relu(const Tensor4<T>&);                                                  \
  template Tensor4<T> relu_backward(const Tensor4<T>&, const Tensor4<T>&);                      \
  template Tensor4<T> sigmoid(const Tensor4<T>&);                                               \
  template Tensor4<T> sigmoid_backward(const Tensor4<T>&, const Tensor4<T>&);                   \
  template SoftmaxLoss<T> softmax_cross_entropy(const Tensor4<T>&, std::span<const int>);       \
  template T softmax_cross_entropy(std::span<const T>, int);                                    \
  template Tensor4<T> softmax_cross_entropy_backward(const Tensor4<T>&, std::span<const int>);  \
  template T smooth_l1_scalar(T);                                                               \
  template T smooth_l1(const Tensor4<T>&, const Tensor4<T>&, std::span<const T>);               \
  template Tensor4<T> smooth_l1_backward(const Tensor4<T>&, const Tensor4<T>&, std::span<const T>);

FSN_INSTANTIATE(float)
FSN_INSTANTIATE(double)
#undef FSN_INSTANTIATE

}  // namespace fsn
