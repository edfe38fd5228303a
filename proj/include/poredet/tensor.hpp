#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace poredet {

/// Shape of a batch of feature maps, stored batch-major then row-major with
/// channels innermost (NHWC).
struct Shape {
  int batch = 1;
  int height = 1;
  int width = 1;
  int channels = 1;

  std::size_t size() const {
    return static_cast<std::size_t>(batch) * height * width * channels;
  }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

/// Dense NHWC tensor. A single FeatureMap is the batch == 1 case.
template <typename T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;
  explicit Tensor(Shape shape, T fill = T{0});
  Tensor(int batch, int height, int width, int channels, T fill = T{0})
      : Tensor(Shape{batch, height, width, channels}, fill) {}

  const Shape& shape() const noexcept { return shape_; }
  int batch() const noexcept { return shape_.batch; }
  int height() const noexcept { return shape_.height; }
  int width() const noexcept { return shape_.width; }
  int channels() const noexcept { return shape_.channels; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::size_t index(int n, int y, int x, int c) const noexcept {
    return ((static_cast<std::size_t>(n) * shape_.height + y) * shape_.width + x) *
               shape_.channels +
           c;
  }
  T& operator()(int n, int y, int x, int c) noexcept { return data_[index(n, y, x, c)]; }
  const T& operator()(int n, int y, int x, int c) const noexcept {
    return data_[index(n, y, x, c)];
  }

  T* data() noexcept { return data_.data(); }
  const T* data() const noexcept { return data_.data(); }
  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  /// Copy of sample n as a batch-1 tensor.
  Tensor sample(int n) const;

  bool operator==(const Tensor&) const = default;

 private:
  Shape shape_{};
  std::vector<T> data_;
};

extern template class Tensor<float>;
extern template class Tensor<double>;

using FeatureMap = Tensor<float>;

}  // namespace poredet
