#ifndef FSN_OPS_HPP_
#define FSN_OPS_HPP_

#include <span>
#include <vector>

#include "fsn/tensor.hpp"

namespace fsn {

struct Offset2 {
  int dr = 0;  // +row points down
  int dc = 0;  // +col points right
  bool operator==(const Offset2&) const = default;
};

/// Convolution parameters. kernel is (c_out, c_in, kh, kw), bias is (c_out, 1, 1, 1).
///
/// A nonzero offset displaces the whole sampling grid by (dr, dc) at every output
/// position; (0, 0) is plain cross-correlation.
template <typename T>
struct ConvParams {
  Tensor4<T> kernel;
  Tensor4<T> bias;
  Offset2 offset;
  int stride = 1;
  int padding = 0;

  std::size_t c_out() const { return kernel.n(); }
  std::size_t c_in() const { return kernel.c(); }
  std::size_t ksize() const { return kernel.h(); }
  std::size_t parameter_count() const { return kernel.size() + bias.size(); }
};

template <typename T>
ConvParams<T> make_conv(std::size_t c_out, std::size_t c_in, std::size_t k, int stride = 1,
                        int padding = -1, Offset2 offset = {});

/// weight is (d_out, d_in, 1, 1), bias is (d_out, 1, 1, 1).
template <typename T>
struct FcParams {
  Tensor4<T> weight;
  Tensor4<T> bias;

  std::size_t d_out() const { return weight.n(); }
  std::size_t d_in() const { return weight.c(); }
  std::size_t parameter_count() const { return weight.size() + bias.size(); }
};

template <typename T>
FcParams<T> make_fc(std::size_t d_out, std::size_t d_in);

template <typename T>
struct ConvGrads {
  Tensor4<T> dx;
  Tensor4<T> dkernel;
  Tensor4<T> dbias;
};

template <typename T>
struct FcGrads {
  Tensor4<T> dx;
  Tensor4<T> dweight;
  Tensor4<T> dbias;
};

Shape4 conv_output_shape(const Shape4& x, std::size_t c_out, std::size_t k, int stride,
                         int padding);

template <typename T>
Tensor4<T> conv2d(const Tensor4<T>& x, const ConvParams<T>& p);

/// Same arithmetic as conv2d; additionally enforces the 3x3 kernel and |offset| <= 2.
template <typename T>
Tensor4<T> shifted_conv2d(const Tensor4<T>& x, const ConvParams<T>& p);

/// Gradients of conv2d / shifted_conv2d. Out-of-bounds samples receive nothing.
template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const ConvParams<T>& p,
                             const Tensor4<T>& grad_out);

/// Batched y = W x + b over rows; each row of x is its flattened (c, h, w) block.
/// Output is (rows, d_out, 1, 1).
template <typename T>
Tensor4<T> fully_connected(const Tensor4<T>& x, const FcParams<T>& p);

template <typename T>
FcGrads<T> fully_connected_backward(const Tensor4<T>& x, const FcParams<T>& p,
                                    const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> relu(const Tensor4<T>& x);

/// dx = dy where x > 0, else 0 (zero subgradient at the kink).
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> sigmoid(const Tensor4<T>& x);
template <typename T>
Tensor4<T> sigmoid_backward(const Tensor4<T>& y, const Tensor4<T>& grad_out);

template <typename T>
struct SoftmaxLoss {
  T loss = 0;          // mean over rows
  Tensor4<T> probs;    // (rows, classes, 1, 1)
};

/// Rows of logits are (rows, classes, 1, 1); labels in [0, classes).
template <typename T>
SoftmaxLoss<T> softmax_cross_entropy(const Tensor4<T>& logits, std::span<const int> labels);

/// Single-row convenience.
template <typename T>
T softmax_cross_entropy(std::span<const T> logits, int label);

template <typename T>
Tensor4<T> softmax_cross_entropy_backward(const Tensor4<T>& probs, std::span<const int> labels);

/// sum_i w_row(i) * s(pred_i - target_i), s(d) = 0.5 d^2 if |d| < 1 else |d| - 0.5.
/// An empty row_weight means weight 1 for every row.
template <typename T>
T smooth_l1(const Tensor4<T>& pred, const Tensor4<T>& target,
            std::span<const T> row_weight = {});

template <typename T>
Tensor4<T> smooth_l1_backward(const Tensor4<T>& pred, const Tensor4<T>& target,
                              std::span<const T> row_weight = {});

template <typename T>
T smooth_l1_scalar(T d);

}  // namespace fsn

#endif  // FSN_OPS_HPP_
