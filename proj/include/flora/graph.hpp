#pragma once

#include <functional>
#include <stdexcept>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

template <class T>
class Graph;

/// Handle to a node on a Graph tape. Cheap to copy; invalid by default.
template <class T>
struct Var {
  Graph<T>* g = nullptr;
  int32_t id = -1;

  bool valid() const { return g != nullptr && id >= 0; }
  const Tensor<T>& val() const;
  const Shape& shape() const;
  int64_t numel() const { return val().numel(); }
  T scalar() const;
};

/// Define-by-run reverse-mode tape. Values are computed eagerly as ops are
/// recorded; backward() replays the tape in reverse. Single-threaded and
/// bitwise deterministic for a fixed op sequence.
template <class T>
class Graph {
 public:
  using BackFn = std::function<void(Graph<T>&, int32_t self)>;

  Var<T> leaf(Tensor<T> value, bool needs_grad);
  Var<T> constant(Tensor<T> value) { return leaf(std::move(value), false); }
  Var<T> make(Tensor<T> value, bool needs_grad, BackFn backward);

  const Tensor<T>& value(int32_t id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool wants_grad(int32_t id) const { return nodes_[static_cast<size_t>(id)].needs_grad; }

  /// Gradient accumulation buffer, zero-initialized on first touch.
  Tensor<T>& grad_buffer(int32_t id);
  /// Gradient of a node, or nullptr if no gradient ever reached it.
  const Tensor<T>* grad(int32_t id) const;

  void backward(Var<T> root);
  void clear();
  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    BackFn backprop;
    bool needs_grad = false;
    bool grad_live = false;
  };
  std::vector<Node> nodes_;
};

template <class T>
inline const Tensor<T>& Var<T>::val() const {
  return g->value(id);
}
template <class T>
inline const Shape& Var<T>::shape() const {
  return g->value(id).shape;
}
template <class T>
inline T Var<T>::scalar() const {
  const Tensor<T>& v = val();
  if (v.numel() != 1) throw std::logic_error("Var::scalar: tensor has " + std::to_string(v.numel()) + " elements");
  return v.data[0];
}

extern template class Graph<float>;
extern template class Graph<double>;
extern template struct Var<float>;
extern template struct Var<double>;

}  // namespace flora
