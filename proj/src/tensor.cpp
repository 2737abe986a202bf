#include "pneumanet/tensor.hpp"

#include <cmath>

namespace pneumanet {

std::string to_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

template <typename T>
bool Tensor<T>::all_finite() const {
  for (T v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

void require_same_shape(const Shape& expected, const Shape& actual,
                        const std::string& what) {
  if (expected != actual) {
    throw ShapeError(what + ": shape mismatch, expected " + to_string(expected) +
                     " but got " + to_string(actual));
  }
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace pneumanet
