#include "poredet/tensor.hpp"

#include <algorithm>

#include "poredet/errors.hpp"

namespace poredet {

std::string Shape::str() const {
  return std::to_string(batch) + "x" + std::to_string(height) + "x" + std::to_string(width) +
         "x" + std::to_string(channels);
}

template <typename T>
Tensor<T>::Tensor(Shape shape, T fill) : shape_(shape) {
  if (shape.batch < 0 || shape.height < 1 || shape.width < 1 || shape.channels < 1) {
    throw SizeMismatch("invalid tensor shape " + shape.str());
  }
  data_.assign(shape.size(), fill);
}

template <typename T>
Tensor<T> Tensor<T>::sample(int n) const {
  Tensor out(Shape{1, shape_.height, shape_.width, shape_.channels});
  const std::size_t stride = out.size();
  std::copy_n(data_.begin() + static_cast<std::ptrdiff_t>(stride * n), stride,
              out.data_.begin());
  return out;
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace poredet
