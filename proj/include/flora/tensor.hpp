#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace flora {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool shape_eq(const Shape& a, const Shape& b);

/// Dense row-major tensor. The last dimension is contiguous.
template <class T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), T(0)) {}
  Tensor(Shape s, T fill) : shape(std::move(s)), data(static_cast<size_t>(shape_numel(shape)), fill) {}

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int rank() const { return static_cast<int>(shape.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }

  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  // [C,H,W] accessor, bounds unchecked
  T& at3(int64_t c, int64_t y, int64_t x) { return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)]; }
  T at3(int64_t c, int64_t y, int64_t x) const { return data[static_cast<size_t>((c * shape[1] + y) * shape[2] + x)]; }
};

template <class T, class U>
Tensor<T> tensor_cast(const Tensor<U>& u) {
  Tensor<T> t(u.shape);
  for (int64_t i = 0; i < u.numel(); ++i) t.data[static_cast<size_t>(i)] = static_cast<T>(u.data[static_cast<size_t>(i)]);
  return t;
}

}  // namespace flora
