#include "flora/ops.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstring>
#include <memory>

namespace flora {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

std::string shape_str(const Shape& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

bool shape_eq(const Shape& a, const Shape& b) { return a == b; }

namespace {

template <class T>
void check_same(const Var<T>& a, const Var<T>& b, const char* op) {
  if (!shape_eq(a.shape(), b.shape()))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
}

// mirror without edge duplication, folded periodically so any pad width works
int64_t reflect_index(int64_t i, int64_t n) {
  if (n == 1) return 0;
  const int64_t period = 2 * (n - 1);
  i = ((i % period) + period) % period;
  return i < n ? i : period - i;
}

}  // namespace

// ---------------------------------------------------------------------------
// Graph
// ---------------------------------------------------------------------------

template <class T>
Var<T> Graph<T>::leaf(Tensor<T> value, bool needs_grad) {
  Node nd;
  nd.value = std::move(value);
  nd.needs_grad = needs_grad;
  nodes_.push_back(std::move(nd));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <class T>
Var<T> Graph<T>::make(Tensor<T> value, bool needs_grad, BackFn backward) {
  Node nd;
  nd.value = std::move(value);
  nd.needs_grad = needs_grad;
  if (needs_grad) nd.backprop = std::move(backward);
  nodes_.push_back(std::move(nd));
  return Var<T>{this, static_cast<int32_t>(nodes_.size() - 1)};
}

template <class T>
Tensor<T>& Graph<T>::grad_buffer(int32_t id) {
  Node& nd = nodes_[static_cast<size_t>(id)];
  if (!nd.grad_live) {
    nd.grad = Tensor<T>(nd.value.shape);
    nd.grad_live = true;
  }
  return nd.grad;
}

template <class T>
const Tensor<T>* Graph<T>::grad(int32_t id) const {
  const Node& nd = nodes_[static_cast<size_t>(id)];
  return nd.grad_live ? &nd.grad : nullptr;
}

template <class T>
void Graph<T>::backward(Var<T> root) {
  if (root.g != this) throw std::logic_error("backward: root from another graph");
  if (root.val().numel() != 1) throw std::logic_error("backward: root must be scalar");
  if (!nodes_[static_cast<size_t>(root.id)].needs_grad) return;
  grad_buffer(root.id).data[0] = T(1);
  for (int32_t i = root.id; i >= 0; --i) {
    Node& nd = nodes_[static_cast<size_t>(i)];
    if (!nd.needs_grad || !nd.grad_live || !nd.backprop) continue;
    nd.backprop(*this, i);
  }
}

template <class T>
void Graph<T>::clear() {
  nodes_.clear();
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_same(a, b, "add");
  Tensor<T> out = a.val();
  const T* pb = b.val().ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] += pb[i];
  const bool ng = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int32_t ia = a.id, ib = b.id;
  return g.make(std::move(out), ng, [ia, ib, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    for (int32_t p : {ia, ib}) {
      if (!gr.wants_grad(p)) continue;
      T* gp = gr.grad_buffer(p).ptr();
      for (int64_t i = 0; i < n; ++i) gp[i] += gy[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_same(a, b, "sub");
  Tensor<T> out = a.val();
  const T* pb = b.val().ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] -= pb[i];
  const bool ng = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int32_t ia = a.id, ib = b.id;
  return g.make(std::move(out), ng, [ia, ib, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    if (gr.wants_grad(ia)) {
      T* ga = gr.grad_buffer(ia).ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i];
    }
    if (gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_same(a, b, "mul");
  Tensor<T> out = a.val();
  const T* pb = b.val().ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] *= pb[i];
  const bool ng = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int32_t ia = a.id, ib = b.id;
  return g.make(std::move(out), ng, [ia, ib, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* va = gr.value(ia).ptr();
    const T* vb = gr.value(ib).ptr();
    if (gr.wants_grad(ia)) {
      T* ga = gr.grad_buffer(ia).ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] * vb[i];
    }
    if (gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t i = 0; i < n; ++i) gb[i] += gy[i] * va[i];
    }
  });
}

template <class T>
Var<T> divide(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  check_same(a, b, "divide");
  Tensor<T> out = a.val();
  const T* pb = b.val().ptr();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] /= pb[i];
  const bool ng = g.wants_grad(a.id) || g.wants_grad(b.id);
  const int32_t ia = a.id, ib = b.id;
  return g.make(std::move(out), ng, [ia, ib, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* va = gr.value(ia).ptr();
    const T* vb = gr.value(ib).ptr();
    if (gr.wants_grad(ia)) {
      T* ga = gr.grad_buffer(ia).ptr();
      for (int64_t i = 0; i < n; ++i) ga[i] += gy[i] / vb[i];
    }
    if (gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t i = 0; i < n; ++i) gb[i] -= gy[i] * va[i] / (vb[i] * vb[i]);
    }
  });
}

template <class T>
Var<T> affine(Var<T> x, T scale, T shift) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (int64_t i = 0; i < n; ++i) out.data[static_cast<size_t>(i)] = scale * out.data[static_cast<size_t>(i)] + shift;
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, scale, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += scale * gy[i];
  });
}

template <class T>
Var<T> square(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = v * v;
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += T(2) * vx[i] * gy[i];
  });
}

template <class T>
Var<T> sqrt_safe(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = v > T(0) ? std::sqrt(v) : T(0);
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T guard = T(1e-24);
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    const T* vy = gr.value(self).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i)
      if (vx[i] > guard) gx[i] += gy[i] / (T(2) * vy[i]);
  });
}

template <class T>
Var<T> abs_val(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = std::abs(v);
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += vx[i] > T(0) ? gy[i] : (vx[i] < T(0) ? -gy[i] : T(0));
  });
}

template <class T>
Var<T> log_val(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = std::log(v);
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] / vx[i];
  });
}

template <class T>
Var<T> clamp(Var<T> x, T lo, T hi) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = std::min(std::max(v, lo), hi);
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, lo, hi, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i)
      if (vx[i] >= lo && vx[i] <= hi) gx[i] += gy[i];
  });
}

template <class T>
Var<T> sigmoid(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vy = gr.value(self).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * vy[i] * (T(1) - vy[i]);
  });
}

template <class T>
Var<T> tanh_act(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = std::tanh(v);
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vy = gr.value(self).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy[i] * (T(1) - vy[i] * vy[i]);
  });
}

template <class T>
Var<T> silu(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> out = x.val();
  const int64_t n = out.numel();
  for (auto& v : out.data) v = v / (T(1) + std::exp(-v));
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) {
      const T s = T(1) / (T(1) + std::exp(-vx[i]));
      gx[i] += gy[i] * s * (T(1) + vx[i] * (T(1) - s));
    }
  });
}

template <class T>
Var<T> stop_grad(Var<T> x) {
  return x.g->constant(x.val());
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

template <class T>
Var<T> sum_all(Var<T> x) {
  Graph<T>& g = *x.g;
  T acc = T(0);
  for (T v : x.val().data) acc += v;
  Tensor<T> out(Shape{1});
  out.data[0] = acc;
  const int32_t ix = x.id;
  const int64_t n = x.numel();
  return g.make(std::move(out), g.wants_grad(ix), [ix, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T gy = gr.grad(self)->data[0];
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[i] += gy;
  });
}

template <class T>
Var<T> mean_all(Var<T> x) {
  return affine(sum_all(x), T(1) / static_cast<T>(x.numel()), T(0));
}

// ---------------------------------------------------------------------------
// structure
// ---------------------------------------------------------------------------

template <class T>
Var<T> concat_ch(const std::vector<Var<T>>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat_ch: empty input");
  Graph<T>& g = *xs[0].g;
  const int64_t h = xs[0].shape()[1], w = xs[0].shape()[2];
  int64_t ctot = 0;
  bool ng = false;
  for (const auto& x : xs) {
    if (x.shape().size() != 3 || x.shape()[1] != h || x.shape()[2] != w)
      throw std::invalid_argument("concat_ch: incompatible shapes");
    ctot += x.shape()[0];
    ng = ng || g.wants_grad(x.id);
  }
  Tensor<T> out(Shape{ctot, h, w});
  int64_t off = 0;
  std::vector<int32_t> ids;
  std::vector<int64_t> sizes;
  for (const auto& x : xs) {
    const int64_t sz = x.numel();
    std::memcpy(out.ptr() + off, x.val().ptr(), static_cast<size_t>(sz) * sizeof(T));
    ids.push_back(x.id);
    sizes.push_back(sz);
    off += sz;
  }
  return g.make(std::move(out), ng, [ids, sizes](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    int64_t off2 = 0;
    for (size_t k = 0; k < ids.size(); ++k) {
      if (gr.wants_grad(ids[k])) {
        T* gx = gr.grad_buffer(ids[k]).ptr();
        for (int64_t i = 0; i < sizes[k]; ++i) gx[i] += gy[off2 + i];
      }
      off2 += sizes[k];
    }
  });
}

template <class T>
Var<T> slice_ch(Var<T> x, int64_t c0, int64_t c1) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  if (c0 < 0 || c1 > s[0] || c0 >= c1) throw std::invalid_argument("slice_ch: bad range");
  const int64_t plane = s[1] * s[2];
  Tensor<T> out(Shape{c1 - c0, s[1], s[2]});
  std::memcpy(out.ptr(), x.val().ptr() + c0 * plane, static_cast<size_t>(out.numel()) * sizeof(T));
  const int32_t ix = x.id;
  const int64_t n = out.numel(), off = c0 * plane;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n, off](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t i = 0; i < n; ++i) gx[off + i] += gy[i];
  });
}

template <class T>
Var<T> channel_mean(Var<T> x) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], plane = s[1] * s[2];
  Tensor<T> out(Shape{1, s[1], s[2]});
  const T* px = x.val().ptr();
  const T inv = T(1) / static_cast<T>(c);
  for (int64_t i = 0; i < plane; ++i) {
    T acc = T(0);
    for (int64_t ch = 0; ch < c; ++ch) acc += px[ch * plane + i];
    out.data[static_cast<size_t>(i)] = acc * inv;
  }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, plane, inv](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t i = 0; i < plane; ++i) gx[ch * plane + i] += gy[i] * inv;
  });
}

template <class T>
Var<T> pad_reflect(Var<T> x, int64_t top, int64_t bottom, int64_t left, int64_t right) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], h = s[1], w = s[2];
  const int64_t ho = h + top + bottom, wo = w + left + right;
  Tensor<T> out(Shape{c, ho, wo});
  const T* px = x.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < ho; ++y) {
      const int64_t sy = reflect_index(y - top, h);
      for (int64_t xx = 0; xx < wo; ++xx)
        out.data[static_cast<size_t>((ch * ho + y) * wo + xx)] =
            px[(ch * h + sy) * w + reflect_index(xx - left, w)];
    }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, h, w, ho, wo, top, left](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ho; ++y) {
        const int64_t sy = reflect_index(y - top, h);
        for (int64_t xx = 0; xx < wo; ++xx)
          gx[(ch * h + sy) * w + reflect_index(xx - left, w)] += gy[(ch * ho + y) * wo + xx];
      }
  });
}

template <class T>
Var<T> crop_spatial(Var<T> x, int64_t h, int64_t w) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], hi = s[1], wi = s[2];
  if (h > hi || w > wi) throw std::invalid_argument("crop_spatial: crop larger than input");
  Tensor<T> out(Shape{c, h, w});
  const T* px = x.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < h; ++y)
      std::memcpy(out.ptr() + (ch * h + y) * w, px + (ch * hi + y) * wi, static_cast<size_t>(w) * sizeof(T));
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, h, w, hi, wi](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t xx = 0; xx < w; ++xx) gx[(ch * hi + y) * wi + xx] += gy[(ch * h + y) * w + xx];
  });
}

namespace {

// align_corners=false: out(o) samples in at (o + 0.5)/2 - 0.5
struct Lerp2x {
  std::vector<int64_t> i0, i1;
  std::vector<double> w0, w1;
  explicit Lerp2x(int64_t n) {
    const int64_t m = 2 * n;
    i0.resize(static_cast<size_t>(m));
    i1.resize(static_cast<size_t>(m));
    w0.resize(static_cast<size_t>(m));
    w1.resize(static_cast<size_t>(m));
    for (int64_t o = 0; o < m; ++o) {
      const double src = (static_cast<double>(o) + 0.5) / 2.0 - 0.5;
      double f = std::floor(src);
      double frac = src - f;
      int64_t a = static_cast<int64_t>(f);
      int64_t b = a + 1;
      if (a < 0) { a = 0; b = 0; frac = 0.0; }
      if (b > n - 1) { a = n - 1; b = n - 1; frac = 0.0; }
      i0[static_cast<size_t>(o)] = a;
      i1[static_cast<size_t>(o)] = b;
      w0[static_cast<size_t>(o)] = 1.0 - frac;
      w1[static_cast<size_t>(o)] = frac;
    }
  }
};

}  // namespace

template <class T>
Var<T> upsample_bilinear2x(Var<T> x) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], h = s[1], w = s[2];
  const int64_t ho = 2 * h, wo = 2 * w;
  auto ly = std::make_shared<Lerp2x>(h);
  auto lx = std::make_shared<Lerp2x>(w);
  Tensor<T> out(Shape{c, ho, wo});
  const T* px = x.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < ho; ++y) {
      const T* r0 = px + (ch * h + ly->i0[static_cast<size_t>(y)]) * w;
      const T* r1 = px + (ch * h + ly->i1[static_cast<size_t>(y)]) * w;
      const T wy0 = static_cast<T>(ly->w0[static_cast<size_t>(y)]), wy1 = static_cast<T>(ly->w1[static_cast<size_t>(y)]);
      T* orow = out.ptr() + (ch * ho + y) * wo;
      for (int64_t xx = 0; xx < wo; ++xx) {
        const int64_t a = lx->i0[static_cast<size_t>(xx)], b = lx->i1[static_cast<size_t>(xx)];
        const T wx0 = static_cast<T>(lx->w0[static_cast<size_t>(xx)]), wx1 = static_cast<T>(lx->w1[static_cast<size_t>(xx)]);
        orow[xx] = wy0 * (wx0 * r0[a] + wx1 * r0[b]) + wy1 * (wx0 * r1[a] + wx1 * r1[b]);
      }
    }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, h, w, ho, wo, ly, lx](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ho; ++y) {
        T* r0 = gx + (ch * h + ly->i0[static_cast<size_t>(y)]) * w;
        T* r1 = gx + (ch * h + ly->i1[static_cast<size_t>(y)]) * w;
        const T wy0 = static_cast<T>(ly->w0[static_cast<size_t>(y)]), wy1 = static_cast<T>(ly->w1[static_cast<size_t>(y)]);
        const T* grow = gy + (ch * ho + y) * wo;
        for (int64_t xx = 0; xx < wo; ++xx) {
          const int64_t a = lx->i0[static_cast<size_t>(xx)], b = lx->i1[static_cast<size_t>(xx)];
          const T wx0 = static_cast<T>(lx->w0[static_cast<size_t>(xx)]), wx1 = static_cast<T>(lx->w1[static_cast<size_t>(xx)]);
          const T gv = grow[xx];
          r0[a] += wy0 * wx0 * gv;
          r0[b] += wy0 * wx1 * gv;
          r1[a] += wy1 * wx0 * gv;
          r1[b] += wy1 * wx1 * gv;
        }
      }
  });
}

template <class T>
Var<T> maxpool2x2(Var<T> x) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], h = s[1], w = s[2];
  if (h % 2 || w % 2) throw std::invalid_argument("maxpool2x2: dimensions must be even");
  const int64_t ho = h / 2, wo = w / 2;
  Tensor<T> out(Shape{c, ho, wo});
  auto arg = std::make_shared<std::vector<int32_t>>(static_cast<size_t>(c * ho * wo));
  const T* px = x.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < ho; ++y)
      for (int64_t xx = 0; xx < wo; ++xx) {
        const int64_t base = (ch * h + 2 * y) * w + 2 * xx;
        const int64_t idx4[4] = {base, base + 1, base + w, base + w + 1};
        int best = 0;
        T bv = px[idx4[0]];
        for (int k = 1; k < 4; ++k)
          if (px[idx4[k]] > bv) { bv = px[idx4[k]]; best = k; }
        out.data[static_cast<size_t>((ch * ho + y) * wo + xx)] = bv;
        (*arg)[static_cast<size_t>((ch * ho + y) * wo + xx)] = static_cast<int32_t>(idx4[best] - base);
      }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, h, w, ho, wo, arg](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < ho; ++y)
        for (int64_t xx = 0; xx < wo; ++xx) {
          const int64_t o = (ch * ho + y) * wo + xx;
          gx[(ch * h + 2 * y) * w + 2 * xx + (*arg)[static_cast<size_t>(o)]] += gy[o];
        }
  });
}

// ---------------------------------------------------------------------------
// conv2d / group_norm
// ---------------------------------------------------------------------------

template <class T>
Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad) {
  Graph<T>& g = *x.g;
  const Shape& xs = x.shape();
  const Shape& ws = w.shape();
  if (xs.size() != 3 || ws.size() != 4) throw std::invalid_argument("conv2d: expects x[C,H,W], w[Co,Ci,kh,kw]");
  const int64_t ci = xs[0], h = xs[1], ww = xs[2];
  const int64_t co = ws[0], kh = ws[2], kw = ws[3];
  if (ws[1] != ci)
    throw std::invalid_argument("conv2d: input has " + std::to_string(ci) + " channels, kernel expects " +
                                std::to_string(ws[1]));
  if (b.valid() && (b.shape().size() != 1 || b.shape()[0] != co)) throw std::invalid_argument("conv2d: bad bias shape");
  const int64_t s = stride, p = pad;
  const int64_t ho = (h + 2 * p - kh) / s + 1;
  const int64_t wo = (ww + 2 * p - kw) / s + 1;
  if (ho <= 0 || wo <= 0) throw std::invalid_argument("conv2d: output would be empty");

  Tensor<T> out(Shape{co, ho, wo});
  const T* px = x.val().ptr();
  const T* pw = w.val().ptr();
  const T* pb = b.valid() ? b.val().ptr() : nullptr;

  for (int64_t oc = 0; oc < co; ++oc) {
    T* oplane = out.ptr() + oc * ho * wo;
    if (pb) {
      const T bv = pb[oc];
      for (int64_t i = 0; i < ho * wo; ++i) oplane[i] = bv;
    }
    for (int64_t ic = 0; ic < ci; ++ic) {
      const T* xplane = px + ic * h * ww;
      const T* wbase = pw + ((oc * ci + ic) * kh) * kw;
      for (int64_t ky = 0; ky < kh; ++ky)
        for (int64_t kx = 0; kx < kw; ++kx) {
          const T wv = wbase[ky * kw + kx];
          if (wv == T(0)) continue;
          for (int64_t oy = 0; oy < ho; ++oy) {
            const int64_t iy = oy * s + ky - p;
            if (iy < 0 || iy >= h) continue;
            // valid ox range: 0 <= ox*s + kx - p < ww
            int64_t lo = 0;
            if (kx < p) lo = (p - kx + s - 1) / s;
            int64_t hi2 = wo - 1;
            const int64_t maxix = ww - 1 - kx + p;
            if (maxix < hi2 * s) hi2 = maxix / s;
            const T* xrow = xplane + iy * ww + kx - p;
            T* orow = oplane + oy * wo;
            if (s == 1) {
              for (int64_t ox = lo; ox <= hi2; ++ox) orow[ox] += wv * xrow[ox];
            } else {
              for (int64_t ox = lo; ox <= hi2; ++ox) orow[ox] += wv * xrow[ox * s];
            }
          }
        }
    }
  }

  const int32_t ix = x.id, iw = w.id, ib = b.valid() ? b.id : -1;
  const bool ng = g.wants_grad(ix) || g.wants_grad(iw) || (ib >= 0 && g.wants_grad(ib));
  return g.make(std::move(out), ng, [=](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    const T* vw = gr.value(iw).ptr();
    if (ib >= 0 && gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t oc = 0; oc < co; ++oc) {
        T acc = T(0);
        const T* gplane = gy + oc * ho * wo;
        for (int64_t i = 0; i < ho * wo; ++i) acc += gplane[i];
        gb[oc] += acc;
      }
    }
    if (gr.wants_grad(iw)) {
      T* gw = gr.grad_buffer(iw).ptr();
      for (int64_t oc = 0; oc < co; ++oc) {
        const T* gplane = gy + oc * ho * wo;
        for (int64_t ic = 0; ic < ci; ++ic) {
          const T* xplane = vx + ic * h * ww;
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              T acc = T(0);
              for (int64_t oy = 0; oy < ho; ++oy) {
                const int64_t iy = oy * s + ky - p;
                if (iy < 0 || iy >= h) continue;
                int64_t lo = 0;
                if (kx < p) lo = (p - kx + s - 1) / s;
                int64_t hi2 = wo - 1;
                const int64_t maxix = ww - 1 - kx + p;
                if (maxix < hi2 * s) hi2 = maxix / s;
                const T* xrow = xplane + iy * ww + kx - p;
                const T* grow = gplane + oy * wo;
                if (s == 1) {
                  for (int64_t ox = lo; ox <= hi2; ++ox) acc += grow[ox] * xrow[ox];
                } else {
                  for (int64_t ox = lo; ox <= hi2; ++ox) acc += grow[ox] * xrow[ox * s];
                }
              }
              gw[((oc * ci + ic) * kh + ky) * kw + kx] += acc;
            }
        }
      }
    }
    if (gr.wants_grad(ix)) {
      T* gx = gr.grad_buffer(ix).ptr();
      for (int64_t oc = 0; oc < co; ++oc) {
        const T* gplane = gy + oc * ho * wo;
        for (int64_t ic = 0; ic < ci; ++ic) {
          T* xgplane = gx + ic * h * ww;
          const T* wbase = vw + ((oc * ci + ic) * kh) * kw;
          for (int64_t ky = 0; ky < kh; ++ky)
            for (int64_t kx = 0; kx < kw; ++kx) {
              const T wv = wbase[ky * kw + kx];
              if (wv == T(0)) continue;
              for (int64_t oy = 0; oy < ho; ++oy) {
                const int64_t iy = oy * s + ky - p;
                if (iy < 0 || iy >= h) continue;
                int64_t lo = 0;
                if (kx < p) lo = (p - kx + s - 1) / s;
                int64_t hi2 = wo - 1;
                const int64_t maxix = ww - 1 - kx + p;
                if (maxix < hi2 * s) hi2 = maxix / s;
                T* xrow = xgplane + iy * ww + kx - p;
                const T* grow = gplane + oy * wo;
                if (s == 1) {
                  for (int64_t ox = lo; ox <= hi2; ++ox) xrow[ox] += wv * grow[ox];
                } else {
                  for (int64_t ox = lo; ox <= hi2; ++ox) xrow[ox * s] += wv * grow[ox];
                }
              }
            }
        }
      }
    }
  });
}

template <class T>
Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], h = s[1], w = s[2];
  if (c % groups != 0) throw std::invalid_argument("group_norm: channels not divisible by groups");
  if (gamma.shape() != Shape{c} || beta.shape() != Shape{c}) throw std::invalid_argument("group_norm: bad affine shapes");
  const int64_t cg = c / groups, plane = h * w, m = cg * plane;

  auto mu = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
  auto inv = std::make_shared<std::vector<T>>(static_cast<size_t>(groups));
  Tensor<T> out(s);
  const T* px = x.val().ptr();
  const T* pg = gamma.val().ptr();
  const T* pbt = beta.val().ptr();
  for (int64_t gi = 0; gi < groups; ++gi) {
    const T* base = px + gi * cg * plane;
    T acc = T(0);
    for (int64_t i = 0; i < m; ++i) acc += base[i];
    const T mean = acc / static_cast<T>(m);
    T var = T(0);
    for (int64_t i = 0; i < m; ++i) {
      const T d = base[i] - mean;
      var += d * d;
    }
    var /= static_cast<T>(m);
    const T istd = T(1) / std::sqrt(var + eps);
    (*mu)[static_cast<size_t>(gi)] = mean;
    (*inv)[static_cast<size_t>(gi)] = istd;
    for (int64_t cc = 0; cc < cg; ++cc) {
      const int64_t ch = gi * cg + cc;
      const T gch = pg[ch], bch = pbt[ch];
      const T* xrow = px + ch * plane;
      T* orow = out.ptr() + ch * plane;
      for (int64_t i = 0; i < plane; ++i) orow[i] = gch * (xrow[i] - mean) * istd + bch;
    }
  }

  const int32_t ix = x.id, ig = gamma.id, ibt = beta.id;
  const bool ng = g.wants_grad(ix) || g.wants_grad(ig) || g.wants_grad(ibt);
  return g.make(std::move(out), ng, [=](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* vx = gr.value(ix).ptr();
    const T* vg = gr.value(ig).ptr();
    if (gr.wants_grad(ibt)) {
      T* gb = gr.grad_buffer(ibt).ptr();
      for (int64_t ch = 0; ch < c; ++ch) {
        T acc = T(0);
        const T* grow = gy + ch * plane;
        for (int64_t i = 0; i < plane; ++i) acc += grow[i];
        gb[ch] += acc;
      }
    }
    if (gr.wants_grad(ig)) {
      T* gg = gr.grad_buffer(ig).ptr();
      for (int64_t ch = 0; ch < c; ++ch) {
        const int64_t gi = ch / cg;
        const T mean = (*mu)[static_cast<size_t>(gi)], istd = (*inv)[static_cast<size_t>(gi)];
        const T* grow = gy + ch * plane;
        const T* xrow = vx + ch * plane;
        T acc = T(0);
        for (int64_t i = 0; i < plane; ++i) acc += grow[i] * (xrow[i] - mean) * istd;
        gg[ch] += acc;
      }
    }
    if (gr.wants_grad(ix)) {
      T* gx = gr.grad_buffer(ix).ptr();
      for (int64_t gi = 0; gi < groups; ++gi) {
        const T mean = (*mu)[static_cast<size_t>(gi)], istd = (*inv)[static_cast<size_t>(gi)];
        // dxhat = gy * gamma; dx = istd*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
        T s1 = T(0), s2 = T(0);
        for (int64_t cc = 0; cc < cg; ++cc) {
          const int64_t ch = gi * cg + cc;
          const T gch = vg[ch];
          const T* grow = gy + ch * plane;
          const T* xrow = vx + ch * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const T dxh = grow[i] * gch;
            s1 += dxh;
            s2 += dxh * (xrow[i] - mean) * istd;
          }
        }
        const T im = T(1) / static_cast<T>(m);
        for (int64_t cc = 0; cc < cg; ++cc) {
          const int64_t ch = gi * cg + cc;
          const T gch = vg[ch];
          const T* grow = gy + ch * plane;
          const T* xrow = vx + ch * plane;
          T* gxr = gx + ch * plane;
          for (int64_t i = 0; i < plane; ++i) {
            const T xhat = (xrow[i] - mean) * istd;
            gxr[i] += istd * (grow[i] * gch - s1 * im - xhat * s2 * im);
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// windowed attention pieces
// ---------------------------------------------------------------------------

template <class T>
Var<T> tile_windows(Var<T> x, int w) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t c = s[0], hp = s[1], wp = s[2];
  if (hp % w || wp % w) throw std::invalid_argument("tile_windows: dims must be multiples of window");
  const int64_t gy = hp / w, gx = wp / w, n = gy * gx, t = static_cast<int64_t>(w) * w;
  Tensor<T> out(Shape{n, t, c});
  const T* px = x.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < hp; ++y)
      for (int64_t xx = 0; xx < wp; ++xx) {
        const int64_t wi = (y / w) * gx + (xx / w);
        const int64_t tok = (y % w) * w + (xx % w);
        out.data[static_cast<size_t>((wi * t + tok) * c + ch)] = px[(ch * hp + y) * wp + xx];
      }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, c, hp, wp, w, gx, t](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gyv = gr.grad(self)->ptr();
    T* gxv = gr.grad_buffer(ix).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < hp; ++y)
        for (int64_t xx = 0; xx < wp; ++xx) {
          const int64_t wi = (y / w) * gx + (xx / w);
          const int64_t tok = (y % w) * w + (xx % w);
          gxv[(ch * hp + y) * wp + xx] += gyv[(wi * t + tok) * c + ch];
        }
  });
}

template <class T>
Var<T> untile_windows(Var<T> wins, int64_t c, int64_t hp, int64_t wp, int w) {
  Graph<T>& g = *wins.g;
  const Shape& s = wins.shape();
  const int64_t gy = hp / w, gx = wp / w, t = static_cast<int64_t>(w) * w;
  if (s != Shape{gy * gx, t, c}) throw std::invalid_argument("untile_windows: shape mismatch");
  Tensor<T> out(Shape{c, hp, wp});
  const T* pw = wins.val().ptr();
  for (int64_t ch = 0; ch < c; ++ch)
    for (int64_t y = 0; y < hp; ++y)
      for (int64_t xx = 0; xx < wp; ++xx) {
        const int64_t wi = (y / w) * gx + (xx / w);
        const int64_t tok = (y % w) * w + (xx % w);
        out.data[static_cast<size_t>((ch * hp + y) * wp + xx)] = pw[(wi * t + tok) * c + ch];
      }
  const int32_t iw = wins.id;
  return g.make(std::move(out), g.wants_grad(iw), [iw, c, hp, wp, w, gx, t](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(iw)) return;
    const T* gyv = gr.grad(self)->ptr();
    T* gwv = gr.grad_buffer(iw).ptr();
    for (int64_t ch = 0; ch < c; ++ch)
      for (int64_t y = 0; y < hp; ++y)
        for (int64_t xx = 0; xx < wp; ++xx) {
          const int64_t wi = (y / w) * gx + (xx / w);
          const int64_t tok = (y % w) * w + (xx % w);
          gwv[(wi * t + tok) * c + ch] += gyv[(ch * hp + y) * wp + xx];
        }
  });
}

template <class T>
Var<T> split_heads(Var<T> x, int heads) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t n = s[0], t = s[1], c = s[2];
  if (c % heads) throw std::invalid_argument("split_heads: channels not divisible by heads");
  const int64_t dh = c / heads;
  Tensor<T> out(Shape{n * heads, t, dh});
  const T* px = x.val().ptr();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t hi = 0; hi < heads; ++hi)
        std::memcpy(out.ptr() + (((ni * heads + hi) * t + ti) * dh), px + ((ni * t + ti) * c + hi * dh),
                    static_cast<size_t>(dh) * sizeof(T));
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n, t, c, heads, dh](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t ti = 0; ti < t; ++ti)
        for (int64_t hi = 0; hi < heads; ++hi) {
          const T* src = gy + (((ni * heads + hi) * t + ti) * dh);
          T* dst = gx + ((ni * t + ti) * c + hi * dh);
          for (int64_t d = 0; d < dh; ++d) dst[d] += src[d];
        }
  });
}

template <class T>
Var<T> merge_heads(Var<T> x, int heads) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t nh = s[0], t = s[1], dh = s[2];
  if (nh % heads) throw std::invalid_argument("merge_heads: batch not divisible by heads");
  const int64_t n = nh / heads, c = dh * heads;
  Tensor<T> out(Shape{n, t, c});
  const T* px = x.val().ptr();
  for (int64_t ni = 0; ni < n; ++ni)
    for (int64_t ti = 0; ti < t; ++ti)
      for (int64_t hi = 0; hi < heads; ++hi)
        std::memcpy(out.ptr() + ((ni * t + ti) * c + hi * dh), px + (((ni * heads + hi) * t + ti) * dh),
                    static_cast<size_t>(dh) * sizeof(T));
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, n, t, c, heads, dh](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t ni = 0; ni < n; ++ni)
      for (int64_t ti = 0; ti < t; ++ti)
        for (int64_t hi = 0; hi < heads; ++hi) {
          const T* src = gy + ((ni * t + ti) * c + hi * dh);
          T* dst = gx + (((ni * heads + hi) * t + ti) * dh);
          for (int64_t d = 0; d < dh; ++d) dst[d] += src[d];
        }
  });
}

template <class T>
Var<T> bmm(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[1])
    throw std::invalid_argument("bmm: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  const int64_t bn = sa[0], m = sa[1], k = sa[2], n = sb[2];
  Tensor<T> out(Shape{bn, m, n});
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  for (int64_t bi = 0; bi < bn; ++bi) {
    const T* am = pa + bi * m * k;
    const T* bm = pb + bi * k * n;
    T* om = out.ptr() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t kk = 0; kk < k; ++kk) {
        const T av = am[i * k + kk];
        const T* brow = bm + kk * n;
        T* orow = om + i * n;
        for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
  }
  const int32_t ia = a.id, ib = b.id;
  const bool ng = g.wants_grad(ia) || g.wants_grad(ib);
  return g.make(std::move(out), ng, [ia, ib, bn, m, k, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* va = gr.value(ia).ptr();
    const T* vb = gr.value(ib).ptr();
    if (gr.wants_grad(ia)) {
      T* ga = gr.grad_buffer(ia).ptr();
      for (int64_t bi = 0; bi < bn; ++bi) {
        const T* gm = gy + bi * m * n;
        const T* bm = vb + bi * k * n;
        T* am = ga + bi * m * k;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            T acc = T(0);
            const T* grow = gm + i * n;
            const T* brow = bm + kk * n;
            for (int64_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
            am[i * k + kk] += acc;
          }
      }
    }
    if (gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t bi = 0; bi < bn; ++bi) {
        const T* gm = gy + bi * m * n;
        const T* am = va + bi * m * k;
        T* bm = gb + bi * k * n;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t kk = 0; kk < k; ++kk) {
            const T av = am[i * k + kk];
            const T* grow = gm + i * n;
            T* brow = bm + kk * n;
            for (int64_t j = 0; j < n; ++j) brow[j] += av * grow[j];
          }
      }
    }
  });
}

template <class T>
Var<T> bmm_nt(Var<T> a, Var<T> b) {
  Graph<T>& g = *a.g;
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() != 3 || sb.size() != 3 || sa[0] != sb[0] || sa[2] != sb[2])
    throw std::invalid_argument("bmm_nt: incompatible shapes " + shape_str(sa) + " x " + shape_str(sb));
  const int64_t bn = sa[0], m = sa[1], k = sa[2], n = sb[1];
  Tensor<T> out(Shape{bn, m, n});
  const T* pa = a.val().ptr();
  const T* pb = b.val().ptr();
  for (int64_t bi = 0; bi < bn; ++bi) {
    const T* am = pa + bi * m * k;
    const T* bm = pb + bi * n * k;
    T* om = out.ptr() + bi * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t j = 0; j < n; ++j) {
        T acc = T(0);
        const T* arow = am + i * k;
        const T* brow = bm + j * k;
        for (int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        om[i * n + j] = acc;
      }
  }
  const int32_t ia = a.id, ib = b.id;
  const bool ng = g.wants_grad(ia) || g.wants_grad(ib);
  return g.make(std::move(out), ng, [ia, ib, bn, m, k, n](Graph<T>& gr, int32_t self) {
    const T* gy = gr.grad(self)->ptr();
    const T* va = gr.value(ia).ptr();
    const T* vb = gr.value(ib).ptr();
    if (gr.wants_grad(ia)) {
      T* ga = gr.grad_buffer(ia).ptr();
      for (int64_t bi = 0; bi < bn; ++bi) {
        const T* gm = gy + bi * m * n;
        const T* bm = vb + bi * n * k;
        T* am = ga + bi * m * k;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const T gv = gm[i * n + j];
            const T* brow = bm + j * k;
            T* arow = am + i * k;
            for (int64_t kk = 0; kk < k; ++kk) arow[kk] += gv * brow[kk];
          }
      }
    }
    if (gr.wants_grad(ib)) {
      T* gb = gr.grad_buffer(ib).ptr();
      for (int64_t bi = 0; bi < bn; ++bi) {
        const T* gm = gy + bi * m * n;
        const T* am = va + bi * m * k;
        T* bm = gb + bi * n * k;
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < n; ++j) {
            const T gv = gm[i * n + j];
            const T* arow = am + i * k;
            T* brow = bm + j * k;
            for (int64_t kk = 0; kk < k; ++kk) brow[kk] += gv * arow[kk];
          }
      }
    }
  });
}

template <class T>
Var<T> softmax_lastdim(Var<T> x) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  const int64_t n = s.back();
  const int64_t rows = x.numel() / n;
  Tensor<T> out = x.val();
  for (int64_t r = 0; r < rows; ++r) {
    T* row = out.ptr() + r * n;
    T mx = row[0];
    for (int64_t i = 1; i < n; ++i) mx = std::max(mx, row[i]);
    T acc = T(0);
    for (int64_t i = 0; i < n; ++i) {
      row[i] = std::exp(row[i] - mx);
      acc += row[i];
    }
    const T inv = T(1) / acc;
    for (int64_t i = 0; i < n; ++i) row[i] *= inv;
  }
  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, rows, n](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    const T* vy = gr.value(self).ptr();
    T* gx = gr.grad_buffer(ix).ptr();
    for (int64_t r = 0; r < rows; ++r) {
      const T* yrow = vy + r * n;
      const T* grow = gy + r * n;
      T* xrow = gx + r * n;
      T dot = T(0);
      for (int64_t i = 0; i < n; ++i) dot += grow[i] * yrow[i];
      for (int64_t i = 0; i < n; ++i) xrow[i] += yrow[i] * (grow[i] - dot);
    }
  });
}

// ---------------------------------------------------------------------------
// spectral / specialty
// ---------------------------------------------------------------------------

namespace {

template <class T>
struct FftwTraits;

template <>
struct FftwTraits<double> {
  using Cpx = fftw_complex;
  using Plan = fftw_plan;
  static Cpx* alloc(size_t n) { return fftw_alloc_complex(n); }
  static void free(Cpx* p) { fftw_free(p); }
  static Plan plan(int h, int w, Cpx* in, Cpx* out, int sign) {
    return fftw_plan_dft_2d(h, w, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftw_execute(p); }
  static void destroy(Plan p) { fftw_destroy_plan(p); }
};

template <>
struct FftwTraits<float> {
  using Cpx = fftwf_complex;
  using Plan = fftwf_plan;
  static Cpx* alloc(size_t n) { return fftwf_alloc_complex(n); }
  static void free(Cpx* p) { fftwf_free(p); }
  static Plan plan(int h, int w, Cpx* in, Cpx* out, int sign) {
    return fftwf_plan_dft_2d(h, w, in, out, sign, FFTW_ESTIMATE);
  }
  static void execute(Plan p) { fftwf_execute(p); }
  static void destroy(Plan p) { fftwf_destroy_plan(p); }
};

template <class T>
void dft2(const T* src, int64_t h, int64_t w, std::vector<std::complex<T>>& spectrum, int sign) {
  using FT = FftwTraits<T>;
  const size_t n = static_cast<size_t>(h * w);
  typename FT::Cpx* in = FT::alloc(n);
  typename FT::Cpx* out = FT::alloc(n);
  typename FT::Plan plan = FT::plan(static_cast<int>(h), static_cast<int>(w), in, out, sign);
  for (size_t i = 0; i < n; ++i) {
    in[i][0] = src[2 * i];
    in[i][1] = src[2 * i + 1];
  }
  FT::execute(plan);
  spectrum.resize(n);
  for (size_t i = 0; i < n; ++i) spectrum[i] = std::complex<T>(out[i][0], out[i][1]);
  FT::destroy(plan);
  FT::free(in);
  FT::free(out);
}

}  // namespace

template <class T>
Var<T> log_mag_dft2(Var<T> x, T eps) {
  Graph<T>& g = *x.g;
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] != 1) throw std::invalid_argument("log_mag_dft2: expects [1,H,W]");
  const int64_t h = s[1], w = s[2];
  const size_t n = static_cast<size_t>(h * w);

  std::vector<T> packed(2 * n, T(0));
  const T* px = x.val().ptr();
  for (size_t i = 0; i < n; ++i) packed[2 * i] = px[i];
  auto spectrum = std::make_shared<std::vector<std::complex<T>>>();
  dft2<T>(packed.data(), h, w, *spectrum, FFTW_FORWARD);

  Tensor<T> out(Shape{1, h, w});
  for (size_t i = 0; i < n; ++i) out.data[i] = std::log(std::abs((*spectrum)[i]) + eps);

  const int32_t ix = x.id;
  return g.make(std::move(out), g.wants_grad(ix), [ix, h, w, n, eps, spectrum](Graph<T>& gr, int32_t self) {
    if (!gr.wants_grad(ix)) return;
    const T* gy = gr.grad(self)->ptr();
    // dL/dX_k = gy_k * X_k / ((|X_k| + eps) |X_k|); dL/dx = Re(unnormalized IDFT)
    std::vector<T> cgrad(2 * n, T(0));
    for (size_t i = 0; i < n; ++i) {
      const T mag = std::abs((*spectrum)[i]);
      if (mag < T(1e-30)) continue;
      const T scale = gy[i] / ((mag + eps) * mag);
      cgrad[2 * i] = scale * (*spectrum)[i].real();
      cgrad[2 * i + 1] = scale * (*spectrum)[i].imag();
    }
    std::vector<std::complex<T>> back;
    dft2<T>(cgrad.data(), h, w, back, FFTW_BACKWARD);
    T* gx = gr.grad_buffer(ix).ptr();
    for (size_t i = 0; i < n; ++i) gx[i] += back[i].real();
  });
}

template <class T>
Var<T> hydro_cosine(Var<T> gx_a, Var<T> gy_a, Var<T> gx_b, Var<T> gy_b, const Tensor<uint8_t>& band) {
  Graph<T>& g = *gx_a.g;
  check_same(gx_a, gy_a, "hydro_cosine");
  check_same(gx_a, gx_b, "hydro_cosine");
  check_same(gx_a, gy_b, "hydro_cosine");
  if (band.numel() != gx_a.numel()) throw std::invalid_argument("hydro_cosine: band size mismatch");

  const T norm_guard = T(1e-8);
  const int64_t n = gx_a.numel();
  int64_t nband = 0;
  for (int64_t i = 0; i < n; ++i) nband += band.data[static_cast<size_t>(i)] ? 1 : 0;

  const T* ax = gx_a.val().ptr();
  const T* ay = gy_a.val().ptr();
  const T* bx = gx_b.val().ptr();
  const T* by = gy_b.val().ptr();
  T acc = T(0);
  for (int64_t i = 0; i < n; ++i) {
    if (!band.data[static_cast<size_t>(i)]) continue;
    const T na = std::sqrt(ax[i] * ax[i] + ay[i] * ay[i]);
    const T nb = std::sqrt(bx[i] * bx[i] + by[i] * by[i]);
    if (na < norm_guard || nb < norm_guard) continue;
    acc += T(1) - (ax[i] * bx[i] + ay[i] * by[i]) / (na * nb);
  }
  Tensor<T> out(Shape{1});
  out.data[0] = nband > 0 ? acc / static_cast<T>(nband) : T(0);

  const int32_t iax = gx_a.id, iay = gy_a.id, ibx = gx_b.id, iby = gy_b.id;
  const bool ng = g.wants_grad(iax) || g.wants_grad(iay) || g.wants_grad(ibx) || g.wants_grad(iby);
  auto bandcopy = std::make_shared<Tensor<uint8_t>>(band);
  return g.make(std::move(out), ng, [iax, iay, ibx, iby, n, nband, norm_guard, bandcopy](Graph<T>& gr, int32_t self) {
    if (nband == 0) return;
    const T g0 = gr.grad(self)->data[0] / static_cast<T>(nband);
    const T* ax = gr.value(iax).ptr();
    const T* ay = gr.value(iay).ptr();
    const T* bx = gr.value(ibx).ptr();
    const T* by = gr.value(iby).ptr();
    const bool wax = gr.wants_grad(iax), way = gr.wants_grad(iay);
    const bool wbx = gr.wants_grad(ibx), wby = gr.wants_grad(iby);
    T* gax = wax ? gr.grad_buffer(iax).ptr() : nullptr;
    T* gay = way ? gr.grad_buffer(iay).ptr() : nullptr;
    T* gbx = wbx ? gr.grad_buffer(ibx).ptr() : nullptr;
    T* gby = wby ? gr.grad_buffer(iby).ptr() : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      if (!bandcopy->data[static_cast<size_t>(i)]) continue;
      const T na2 = ax[i] * ax[i] + ay[i] * ay[i];
      const T nb2 = bx[i] * bx[i] + by[i] * by[i];
      const T na = std::sqrt(na2);
      const T nb = std::sqrt(nb2);
      if (na < norm_guard || nb < norm_guard) continue;
      // d/da of -(a.b)/(|a||b|) = (a.b) a / (|a|^3 |b|) - b/(|a||b|), symmetric in b
      const T dot = ax[i] * bx[i] + ay[i] * by[i];
      const T inv = T(1) / (na * nb);
      const T proja = dot / (na2 * na * nb);
      const T projb = dot / (nb2 * nb * na);
      if (wax) gax[i] += g0 * (ax[i] * proja - bx[i] * inv);
      if (way) gay[i] += g0 * (ay[i] * proja - by[i] * inv);
      if (wbx) gbx[i] += g0 * (bx[i] * projb - ax[i] * inv);
      if (wby) gby[i] += g0 * (by[i] * projb - ay[i] * inv);
    }
  });
}

// ---------------------------------------------------------------------------
// explicit instantiations
// ---------------------------------------------------------------------------

template class Graph<float>;
template class Graph<double>;

#define FLORA_INSTANTIATE_OPS(T)                                                                              \
  template Var<T> add(Var<T>, Var<T>);                                                                       \
  template Var<T> sub(Var<T>, Var<T>);                                                                       \
  template Var<T> mul(Var<T>, Var<T>);                                                                       \
  template Var<T> divide(Var<T>, Var<T>);                                                                    \
  template Var<T> affine(Var<T>, T, T);                                                                      \
  template Var<T> square(Var<T>);                                                                            \
  template Var<T> sqrt_safe(Var<T>);                                                                         \
  template Var<T> abs_val(Var<T>);                                                                           \
  template Var<T> log_val(Var<T>);                                                                           \
  template Var<T> clamp(Var<T>, T, T);                                                                       \
  template Var<T> sigmoid(Var<T>);                                                                           \
  template Var<T> tanh_act(Var<T>);                                                                          \
  template Var<T> silu(Var<T>);                                                                              \
  template Var<T> stop_grad(Var<T>);                                                                         \
  template Var<T> sum_all(Var<T>);                                                                           \
  template Var<T> mean_all(Var<T>);                                                                          \
  template Var<T> concat_ch(const std::vector<Var<T>>&);                                                     \
  template Var<T> slice_ch(Var<T>, int64_t, int64_t);                                                        \
  template Var<T> channel_mean(Var<T>);                                                                      \
  template Var<T> pad_reflect(Var<T>, int64_t, int64_t, int64_t, int64_t);                                   \
  template Var<T> crop_spatial(Var<T>, int64_t, int64_t);                                                    \
  template Var<T> upsample_bilinear2x(Var<T>);                                                               \
  template Var<T> maxpool2x2(Var<T>);                                                                        \
  template Var<T> conv2d(Var<T>, Var<T>, Var<T>, int, int);                                                  \
  template Var<T> group_norm(Var<T>, Var<T>, Var<T>, int, T);                                                \
  template Var<T> tile_windows(Var<T>, int);                                                                 \
  template Var<T> untile_windows(Var<T>, int64_t, int64_t, int64_t, int);                                    \
  template Var<T> split_heads(Var<T>, int);                                                                  \
  template Var<T> merge_heads(Var<T>, int);                                                                  \
  template Var<T> bmm(Var<T>, Var<T>);                                                                       \
  template Var<T> bmm_nt(Var<T>, Var<T>);                                                                    \
  template Var<T> softmax_lastdim(Var<T>);                                                                   \
  template Var<T> log_mag_dft2(Var<T>, T);                                                                   \
  template Var<T> hydro_cosine(Var<T>, Var<T>, Var<T>, Var<T>, const Tensor<uint8_t>&);

FLORA_INSTANTIATE_OPS(float)
FLORA_INSTANTIATE_OPS(double)

}  // namespace flora
