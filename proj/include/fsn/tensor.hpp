#ifndef FSN_TENSOR_HPP_
#define FSN_TENSOR_HPP_

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace fsn {

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t numel() const { return n * c * h * w; }
  bool operator==(const Shape4&) const = default;
  std::string str() const;
};

/// Dense (n, c, h, w) row-major array.
///
/// The gradient buffer is absent until `ensure_grad()` is called; after that it
/// always has the same shape as the data. Parameters keep their accumulated
/// gradients here, operators themselves return gradients by value.
template <typename T>
class Tensor4 {
 public:
  using value_type = T;

  Tensor4() = default;
  explicit Tensor4(Shape4 shape, T fill = T(0));
  Tensor4(Shape4 shape, std::vector<T> values);

  const Shape4& shape() const { return shape_; }
  std::size_t n() const { return shape_.n; }
  std::size_t c() const { return shape_.c; }
  std::size_t h() const { return shape_.h; }
  std::size_t w() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* ptr() { return data_.data(); }
  const T* ptr() const { return data_.data(); }

  std::size_t offset(std::size_t in, std::size_t ic, std::size_t ih,
                     std::size_t iw) const {
    return ((in * shape_.c + ic) * shape_.h + ih) * shape_.w + iw;
  }
  T& at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) {
    return data_[offset(in, ic, ih, iw)];
  }
  T at(std::size_t in, std::size_t ic, std::size_t ih, std::size_t iw) const {
    return data_[offset(in, ic, ih, iw)];
  }
  T& operator[](std::size_t i) { return data_[i]; }
  T operator[](std::size_t i) const { return data_[i]; }

  // pointer to the h*w plane of (in, ic)
  T* plane(std::size_t in, std::size_t ic) { return data_.data() + offset(in, ic, 0, 0); }
  const T* plane(std::size_t in, std::size_t ic) const {
    return data_.data() + offset(in, ic, 0, 0);
  }

  bool has_grad() const { return has_grad_; }
  void ensure_grad();
  void zero_grad();
  void drop_grad() {
    grad_.clear();
    grad_.shrink_to_fit();
    has_grad_ = false;
  }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }

  void fill(T value);
  bool all_finite() const;
  T sum() const;

  template <typename U>
  Tensor4<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return Tensor4<U>(shape_, std::move(out));
  }

 private:
  Shape4 shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
  bool has_grad_ = false;
};

template <typename T>
struct AddMulGrads {
  Tensor4<T> da;
  Tensor4<T> db;
};

template <typename T>
Tensor4<T> elementwise_add(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T>
AddMulGrads<T> elementwise_add_backward(const Tensor4<T>& grad_out);

template <typename T>
Tensor4<T> elementwise_mul(const Tensor4<T>& a, const Tensor4<T>& b);
template <typename T>
AddMulGrads<T> elementwise_mul_backward(const Tensor4<T>& a, const Tensor4<T>& b,
                                        const Tensor4<T>& grad_out);

void require_same_shape(const Shape4& a, const Shape4& b, const char* what);

// Binary format: "FSNT", precision byte (4 or 8), three reserved zero bytes,
// then n, c, h, w as little-endian uint32, then the values little-endian.
inline constexpr std::size_t kTensorHeaderBytes = 24;

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t);
template <typename T>
Tensor4<T> read_tensor(std::istream& is);
// Precision byte of the next tensor in the stream without consuming it.
int peek_tensor_precision(std::istream& is);

extern template class Tensor4<float>;
extern template class Tensor4<double>;

}  // namespace fsn

#endif  // FSN_TENSOR_HPP_
