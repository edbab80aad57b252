#include "flora/nn.hpp"

#include <cmath>
#include <stdexcept>

#include "flora/rng.hpp"

namespace flora {

int norm_groups(int64_t c) {
  int g = 1;
  while (g < 8 && c % (g * 2) == 0) g *= 2;
  return g;
}

template <class T>
Tensor<T>& ParamStore<T>::ensure(const std::string& name, const Shape& shape, Init init, int64_t fan_in) {
  auto it = tensors_.find(name);
  if (it != tensors_.end()) {
    if (!shape_eq(it->second.shape, shape))
      throw std::invalid_argument("param '" + name + "' has shape " + shape_str(it->second.shape) +
                                  ", expected " + shape_str(shape));
    return it->second;
  }
  Tensor<T> t(shape);
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      for (auto& v : t.data) v = T(1);
      break;
    case Init::kKaimingUniform: {
      Rng rng(mix_seed(seed_, fnv1a(name)));
      const double bound = std::sqrt(6.0 / static_cast<double>(fan_in > 0 ? fan_in : 1));
      for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
      break;
    }
  }
  return tensors_.emplace(name, std::move(t)).first->second;
}

template <class T>
Tensor<T>& ParamStore<T>::at(const std::string& name) {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("param '" + name + "' not found");
  return it->second;
}

template <class T>
const Tensor<T>& ParamStore<T>::at(const std::string& name) const {
  auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::out_of_range("param '" + name + "' not found");
  return it->second;
}

template <class T>
Var<T> ParamCtx<T>::get(const std::string& name, const Shape& shape, Init init, int64_t fan_in) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  Var<T> v = g_.leaf(store_.ensure(name, shape, init, fan_in), true);
  bound_.emplace(name, v);
  return v;
}

template <class T>
Var<T> ParamCtx<T>::conv(const std::string& prefix, Var<T> x, int64_t out_ch, int k, int stride, int pad, bool bias,
                         Init weight_init) {
  const int64_t in_ch = x.shape()[0];
  Var<T> w = get(prefix + ".w", Shape{out_ch, in_ch, k, k}, weight_init, in_ch * k * k);
  Var<T> b;
  if (bias) b = get(prefix + ".b", Shape{out_ch}, Init::kZeros, 0);
  return conv2d(x, w, b, stride, pad);
}

template <class T>
Var<T> ParamCtx<T>::gn(const std::string& prefix, Var<T> x) {
  const int64_t c = x.shape()[0];
  Var<T> gamma = get(prefix + ".gamma", Shape{c}, Init::kOnes, 0);
  Var<T> beta = get(prefix + ".beta", Shape{c}, Init::kZeros, 0);
  return group_norm(x, gamma, beta, norm_groups(c), T(1e-5));
}

template <class T>
Var<T> ParamCtx<T>::conv_gn_silu(const std::string& prefix, Var<T> x, int64_t out_ch) {
  Var<T> y = conv(prefix, x, out_ch, 3, 1, 1);
  y = gn(prefix + ".gn", y);
  return silu(y);
}

template class ParamStore<float>;
template class ParamStore<double>;
template class ParamCtx<float>;
template class ParamCtx<double>;

}  // namespace flora
