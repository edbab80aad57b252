#pragma once

#include <vector>

#include "flora/graph.hpp"

namespace flora {

// ---- pointwise ----
template <class T> Var<T> add(Var<T> a, Var<T> b);
template <class T> Var<T> sub(Var<T> a, Var<T> b);
template <class T> Var<T> mul(Var<T> a, Var<T> b);
template <class T> Var<T> divide(Var<T> a, Var<T> b);
/// scale * x + shift, elementwise with scalar coefficients
template <class T> Var<T> affine(Var<T> x, T scale, T shift);
template <class T> Var<T> square(Var<T> x);
/// sqrt(max(x, 0)); gradient is zeroed where x is (near) zero
template <class T> Var<T> sqrt_safe(Var<T> x);
template <class T> Var<T> abs_val(Var<T> x);
/// natural log; caller guarantees x > 0 (clamp first)
template <class T> Var<T> log_val(Var<T> x);
template <class T> Var<T> clamp(Var<T> x, T lo, T hi);
template <class T> Var<T> sigmoid(Var<T> x);
template <class T> Var<T> tanh_act(Var<T> x);
template <class T> Var<T> silu(Var<T> x);
/// identity on values, blocks gradient flow
template <class T> Var<T> stop_grad(Var<T> x);

// ---- reductions (result shape {1}) ----
template <class T> Var<T> sum_all(Var<T> x);
template <class T> Var<T> mean_all(Var<T> x);

// ---- structure, [C,H,W] layout ----
template <class T> Var<T> concat_ch(const std::vector<Var<T>>& xs);
template <class T> Var<T> slice_ch(Var<T> x, int64_t c0, int64_t c1);
template <class T> Var<T> channel_mean(Var<T> x);
/// mirror padding without edge duplication, folded periodically so any pad
/// width is valid
template <class T> Var<T> pad_reflect(Var<T> x, int64_t top, int64_t bottom, int64_t left, int64_t right);
template <class T> Var<T> crop_spatial(Var<T> x, int64_t h, int64_t w);
template <class T> Var<T> upsample_bilinear2x(Var<T> x);
template <class T> Var<T> maxpool2x2(Var<T> x);

// ---- conv / norm ----
/// 2-D convolution with zero padding. Pass an invalid Var for no bias.
template <class T> Var<T> conv2d(Var<T> x, Var<T> w, Var<T> b, int stride, int pad);
template <class T> Var<T> group_norm(Var<T> x, Var<T> gamma, Var<T> beta, int groups, T eps);

// ---- windowed attention pieces ----
/// [C,Hp,Wp] -> [n, w*w, C]; Hp, Wp must be multiples of w
template <class T> Var<T> tile_windows(Var<T> x, int w);
template <class T> Var<T> untile_windows(Var<T> wins, int64_t c, int64_t hp, int64_t wp, int w);
/// [n,t,C] -> [n*h, t, C/h]
template <class T> Var<T> split_heads(Var<T> x, int heads);
template <class T> Var<T> merge_heads(Var<T> x, int heads);
/// [b,m,k] x [b,k,n] -> [b,m,n]
template <class T> Var<T> bmm(Var<T> a, Var<T> b);
/// [b,m,k] x [b,n,k]^T -> [b,m,n]
template <class T> Var<T> bmm_nt(Var<T> a, Var<T> b);
template <class T> Var<T> softmax_lastdim(Var<T> x);

// ---- spectral / specialty ----
/// log(|DFT2(x)| + eps) over the full frequency grid, input [1,H,W]
template <class T> Var<T> log_mag_dft2(Var<T> x, T eps);
/// mean over band pixels of 1 - cos(angle(a, b)) between gradient fields
/// a=(gx_a,gy_a), b=(gx_b,gy_b); pixels with a near-zero norm contribute 0
template <class T> Var<T> hydro_cosine(Var<T> gx_a, Var<T> gy_a, Var<T> gx_b, Var<T> gy_b,
                                       const Tensor<uint8_t>& band);

}  // namespace flora
