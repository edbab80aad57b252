#pragma once

#include <map>
#include <string>
#include <unordered_map>

#include "flora/ops.hpp"

namespace flora {

enum class Init { kKaimingUniform, kZeros, kOnes };

/// Named parameter tensors, ordered by name. Initialization is seeded per
/// tensor from (seed, name), so values do not depend on creation order.
template <class T>
class ParamStore {
 public:
  explicit ParamStore(uint64_t seed = 1) : seed_(seed) {}

  /// Returns the named tensor, creating and initializing it on first use.
  /// fan_in drives the Kaiming bound; it is ignored for kZeros / kOnes.
  Tensor<T>& ensure(const std::string& name, const Shape& shape, Init init, int64_t fan_in);

  bool contains(const std::string& name) const { return tensors_.count(name) != 0; }
  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  void put(const std::string& name, Tensor<T> t) { tensors_[name] = std::move(t); }

  std::map<std::string, Tensor<T>>& tensors() { return tensors_; }
  const std::map<std::string, Tensor<T>>& tensors() const { return tensors_; }
  uint64_t seed() const { return seed_; }
  void set_seed(uint64_t s) { seed_ = s; }

 private:
  std::map<std::string, Tensor<T>> tensors_;
  uint64_t seed_;
};

/// Per-forward-pass binding of a ParamStore onto a Graph. Each named tensor
/// becomes exactly one leaf node per pass, so gradients from every use site
/// accumulate on that node.
template <class T>
class ParamCtx {
 public:
  ParamCtx(Graph<T>& g, ParamStore<T>& store) : g_(g), store_(store) {}

  Var<T> get(const std::string& name, const Shape& shape, Init init, int64_t fan_in);

  /// conv + optional bias; weight named <prefix>.w, bias <prefix>.b
  Var<T> conv(const std::string& prefix, Var<T> x, int64_t out_ch, int k, int stride, int pad, bool bias = true,
              Init weight_init = Init::kKaimingUniform);
  /// group-norm with per-channel affine, names <prefix>.gamma / <prefix>.beta
  Var<T> gn(const std::string& prefix, Var<T> x);
  /// conv3x3 (stride 1, pad 1) -> group-norm -> SiLU
  Var<T> conv_gn_silu(const std::string& prefix, Var<T> x, int64_t out_ch);

  Graph<T>& graph() { return g_; }
  ParamStore<T>& store() { return store_; }
  const std::unordered_map<std::string, Var<T>>& touched() const { return bound_; }

 private:
  Graph<T>& g_;
  ParamStore<T>& store_;
  std::unordered_map<std::string, Var<T>> bound_;
};

/// Largest power-of-two group count <= 8 that divides c.
int norm_groups(int64_t c);

extern template class ParamStore<float>;
extern template class ParamStore<double>;
extern template class ParamCtx<float>;
extern template class ParamCtx<double>;

}  // namespace flora
