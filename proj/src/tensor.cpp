#include "fsn/tensor.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace fsn {

static_assert(std::endian::native == std::endian::little,
              "tensor serialization assumes a little-endian host");

std::string Shape4::str() const {
  std::ostringstream os;
  os << "(" << n << ", " << c << ", " << h << ", " << w << ")";
  return os.str();
}

void require_same_shape(const Shape4& a, const Shape4& b, const char* what) {
  if (a != b) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " + a.str() +
                                " vs " + b.str());
  }
}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, T fill) : shape_(shape), data_(shape.numel(), fill) {}

template <typename T>
Tensor4<T>::Tensor4(Shape4 shape, std::vector<T> values)
    : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.numel()) {
    throw std::invalid_argument("Tensor4: " + std::to_string(data_.size()) +
                                " values for shape " + shape_.str());
  }
}

template <typename T>
void Tensor4<T>::ensure_grad() {
  if (!has_grad_) {
    grad_.assign(data_.size(), T(0));
    has_grad_ = true;
  }
}

template <typename T>
void Tensor4<T>::zero_grad() {
  ensure_grad();
  std::fill(grad_.begin(), grad_.end(), T(0));
}

template <typename T>
void Tensor4<T>::fill(T value) {
  std::fill(data_.begin(), data_.end(), value);
}

template <typename T>
bool Tensor4<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

template <typename T>
T Tensor4<T>::sum() const {
  T acc = 0;
  for (T v : data_) acc += v;
  return acc;
}

template <typename T>
Tensor4<T> elementwise_add(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a.shape(), b.shape(), "elementwise_add");
  Tensor4<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  return out;
}

template <typename T>
AddMulGrads<T> elementwise_add_backward(const Tensor4<T>& grad_out) {
  return {grad_out, grad_out};
}

template <typename T>
Tensor4<T> elementwise_mul(const Tensor4<T>& a, const Tensor4<T>& b) {
  require_same_shape(a.shape(), b.shape(), "elementwise_mul");
  Tensor4<T> out(a.shape());
  const T* pa = a.ptr();
  const T* pb = b.ptr();
  T* po = out.ptr();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] * pb[i];
  return out;
}

template <typename T>
AddMulGrads<T> elementwise_mul_backward(const Tensor4<T>& a, const Tensor4<T>& b,
                                        const Tensor4<T>& grad_out) {
  require_same_shape(a.shape(), b.shape(), "elementwise_mul_backward");
  require_same_shape(a.shape(), grad_out.shape(), "elementwise_mul_backward");
  return {elementwise_mul(grad_out, b), elementwise_mul(grad_out, a)};
}

namespace {

constexpr std::array<char, 4> kMagic = {'F', 'S', 'N', 'T'};

template <typename T>
constexpr std::uint8_t precision_byte() {
  return static_cast<std::uint8_t>(sizeof(T));
}

}  // namespace

template <typename T>
void write_tensor(std::ostream& os, const Tensor4<T>& t) {
  std::array<char, kTensorHeaderBytes> header{};
  std::memcpy(header.data(), kMagic.data(), 4);
  header[4] = static_cast<char>(precision_byte<T>());
  const Shape4& s = t.shape();
  const std::array<std::uint32_t, 4> dims = {
      static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
      static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
  std::memcpy(header.data() + 8, dims.data(), sizeof(dims));
  os.write(header.data(), header.size());
  os.write(reinterpret_cast<const char*>(t.ptr()),
           static_cast<std::streamsize>(t.size() * sizeof(T)));
  if (!os) throw std::runtime_error("write_tensor: stream write failed");
}

int peek_tensor_precision(std::istream& is) {
  std::array<char, 5> head{};
  const auto pos = is.tellg();
  is.read(head.data(), head.size());
  if (!is || std::memcmp(head.data(), kMagic.data(), 4) != 0) {
    throw std::runtime_error("read_tensor: bad magic, not an FSNT tensor");
  }
  is.seekg(pos);
  return static_cast<unsigned char>(head[4]);
}

template <typename T>
Tensor4<T> read_tensor(std::istream& is) {
  std::array<char, kTensorHeaderBytes> header{};
  is.read(header.data(), header.size());
  if (!is) throw std::runtime_error("read_tensor: truncated header");
  if (std::memcmp(header.data(), kMagic.data(), 4) != 0) {
    throw std::runtime_error("read_tensor: bad magic, not an FSNT tensor");
  }
  const auto prec = static_cast<std::uint8_t>(header[4]);
  std::array<std::uint32_t, 4> dims{};
  std::memcpy(dims.data(), header.data() + 8, sizeof(dims));
  const Shape4 shape{dims[0], dims[1], dims[2], dims[3]};
  std::vector<T> values(shape.numel());
  if (prec == precision_byte<T>()) {
    is.read(reinterpret_cast<char*>(values.data()),
            static_cast<std::streamsize>(values.size() * sizeof(T)));
  } else if (prec == 4 || prec == 8) {
    // stored at the other precision; convert on load
    if (prec == 4) {
      std::vector<float> raw(values.size());
      is.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(float)));
      std::copy(raw.begin(), raw.end(), values.begin());
    } else {
      std::vector<double> raw(values.size());
      is.read(reinterpret_cast<char*>(raw.data()),
              static_cast<std::streamsize>(raw.size() * sizeof(double)));
      std::copy(raw.begin(), raw.end(), values.begin());
    }
  } else {
    throw std::runtime_error("read_tensor: unknown precision byte " + std::to_string(prec));
  }
  if (!is) throw std::runtime_error("read_tensor: truncated payload for shape " + shape.str());
  return Tensor4<T>(shape, std::move(values));
}

template class Tensor4<float>;
template class Tensor4<double>;

#define FSN_INSTANTIATE(T)                                                              \
  template Tensor4<T> elementwise_add(const Tensor4<T>&, const Tensor4<T>&);            \
  template AddMulGrads<T> elementwise_add_backward(const Tensor4<T>&);                  \
  template Tensor4<T> elementwise_mul(const Tensor4<T>&, const Tensor4<T>&);            \
  template AddMulGrads<T> elementwise_mul_backward(const Tensor4<T>&, const Tensor4<T>&, \
                                                   const Tensor4<T>&);                  \
  template void write_tensor(std::ostream&, const Tensor4<T>&);                         \
  template Tensor4<T> read_tensor(std::istream&);

FSN_INSTANTIATE(float)
FSN_INSTANTIATE(double)
#undef FSN_INSTANTIATE

}  // namespace fsn
