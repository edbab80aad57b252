#pragma once

#include <map>
#include <string>

#include "flora/decoders.hpp"

namespace flora {

template <class T>
struct LossWeights {
  T lambda_c = T(1.0);
  T lambda_s = T(0.2);
  T lambda_f = T(0.05);
  T lambda_e = T(0.1);
  T mu_d = T(1.0);
  T mu_b = T(1.0);
  T mu_h = T(0.1);
  T eta = T(0.1);
  T eps_charb = T(1e-6);
  T eps_dice = T(1.0);
  T eps_log = T(1e-8);
  T rgb_to_seg_ratio = T(0.5);

  void validate() const;
};

struct LossBreakdown {
  double charb = 0, ssim = 0, fft = 0, edge = 0;
  double dice = 0, bce = 0, hydro = 0;
  double distill = 0;
  double l_rgb = 0, l_seg = 0, total = 0;

  /// name of the first non-finite term, or empty
  std::string first_non_finite() const;
};

/// Unweighted channel mean of a 3-channel image.
template <class T>
Var<T> luminance(Var<T> x);

template <class T>
Var<T> charbonnier(Var<T> y_hat, Var<T> y, T eps);

/// 1 - mean SSIM over 3x3 uniform windows (reflect padded), per channel then
/// averaged; C1 = 0.01^2 and C2 = 0.03^2 on unit dynamic range.
template <class T>
Var<T> ssim_loss(Var<T> y_hat, Var<T> y);

template <class T>
Var<T> fft_loss(Var<T> y_hat, Var<T> y, T eps_log);

template <class T>
Var<T> edge_loss(Var<T> y_hat, Var<T> y);

template <class T>
Var<T> dice_loss(Var<T> m_hat, Var<T> m, T eps);

template <class T>
Var<T> bce_loss(Var<T> m_hat, Var<T> m);

/// Pixels whose (2r+1)^2 neighborhood (clipped at borders) holds both
/// classes. Empty iff the mask is constant; invariant under complement.
Tensor<uint8_t> boundary_band(const Tensor<float>& mask, int radius = 1);

/// Sobel gradient map pair (gx, gy) of a single-channel image, reflect padded.
template <class T>
std::pair<Var<T>, Var<T>> sobel_gradients(Var<T> single_channel);

/// Mean over band pixels of 1 - cos(angle) between the reconstruction
/// luminance gradient and the mean-SAR gradient.
template <class T>
Var<T> hydro_edge_loss(Var<T> y_hat, Var<T> sar, const Tensor<uint8_t>& band);

/// Sum over levels of mean |f_l - sg(target_l)|; level-4 target is the shared
/// aligned projection, gradient-stopped like the rest of the teacher side.
template <class T>
Var<T> distill_loss(ParamCtx<T>& P, const FusedPyramid<T>& fused, const TeacherPyramid<T>& teacher,
                    Var<T> p4_aligned);

/// Weighted composite with per-term breakdown (values are immediate since the
/// tape evaluates eagerly).
template <class T>
std::pair<Var<T>, LossBreakdown> total_loss(ParamCtx<T>& P, const ForwardOutput<T>& out, Var<T> y, Var<T> m,
                                            Var<T> sar, const LossWeights<T>& w);

#define FLORA_EXTERN_LOSSES(T)                                                                     \
  extern template struct LossWeights<T>;                                                           \
  extern template Var<T> luminance(Var<T>);                                                        \
  extern template Var<T> charbonnier(Var<T>, Var<T>, T);                                           \
  extern template Var<T> ssim_loss(Var<T>, Var<T>);                                                \
  extern template Var<T> fft_loss(Var<T>, Var<T>, T);                                              \
  extern template Var<T> edge_loss(Var<T>, Var<T>);                                                \
  extern template Var<T> dice_loss(Var<T>, Var<T>, T);                                             \
  extern template Var<T> bce_loss(Var<T>, Var<T>);                                                 \
  extern template std::pair<Var<T>, Var<T>> sobel_gradients(Var<T>);                               \
  extern template Var<T> hydro_edge_loss(Var<T>, Var<T>, const Tensor<uint8_t>&);                  \
  extern template Var<T> distill_loss(ParamCtx<T>&, const FusedPyramid<T>&, const TeacherPyramid<T>&, Var<T>); \
  extern template std::pair<Var<T>, LossBreakdown> total_loss(ParamCtx<T>&, const ForwardOutput<T>&, Var<T>, \
                                                              Var<T>, Var<T>, const LossWeights<T>&);
FLORA_EXTERN_LOSSES(float)
FLORA_EXTERN_LOSSES(double)
#undef FLORA_EXTERN_LOSSES

}  // namespace flora
