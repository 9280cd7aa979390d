#pragma once

#include <cstddef>
#include <cstring>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace rnnt {

/// Raised when operand extents do not conform to an operation.
class DimensionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid hyper-parameters or configuration values.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised for invalid data (empty inputs, out-of-range label ids).
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Raised when a combinatorial guard is exceeded.
class SizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array. A rank-0 tensor (empty shape) holds one scalar.
/// Models and checkpoints use `Tensor` (double); `ExtendedTensor` exists for
/// extended-precision re-evaluation during verification.
template <typename T>
struct BasicTensor {
  using Scalar = T;

  Shape shape;
  std::vector<T> data;

  BasicTensor() : data(1, T(0)) {}
  explicit BasicTensor(Shape s, T fill = T(0)) : shape(std::move(s)), data(numel(shape), fill) {
    for (auto e : shape)
      if (e == 0) throw DimensionError("tensor extents must be positive, got " + to_string(shape));
  }
  BasicTensor(Shape s, std::vector<T> values) : shape(std::move(s)), data(std::move(values)) {
    if (data.size() != numel(shape))
      throw DimensionError("tensor data length " + std::to_string(data.size()) +
                           " does not match shape " + to_string(shape));
  }
  template <typename U>
    requires(!std::is_same_v<U, T>)
  explicit BasicTensor(const BasicTensor<U>& other)
      : shape(other.shape), data(other.data.begin(), other.data.end()) {}

  static BasicTensor scalar(T v) { return BasicTensor(Shape{}, std::vector<T>{v}); }
  static BasicTensor row(std::vector<T> values) {
    const auto n = values.size();
    return BasicTensor({1, n}, std::move(values));
  }
  static BasicTensor matrix(std::size_t rows, std::size_t cols, std::vector<T> values) {
    return BasicTensor({rows, cols}, std::move(values));
  }

  std::size_t size() const { return data.size(); }
  std::size_t rank() const { return shape.size(); }
  std::size_t rows() const { return shape.empty() ? 1 : shape.front(); }
  /// Extent of the trailing axis (1 for scalars).
  std::size_t cols() const { return shape.empty() ? 1 : shape.back(); }

  T& operator[](std::size_t i) { return data[i]; }
  T operator[](std::size_t i) const { return data[i]; }
  T& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
  T at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

  bool operator==(const BasicTensor&) const = default;
};

using Tensor = BasicTensor<double>;
using ExtendedTensor = BasicTensor<long double>;

/// True when shapes match and every stored double has the same bit pattern.
inline bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape == b.shape &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

}  // namespace rnnt
