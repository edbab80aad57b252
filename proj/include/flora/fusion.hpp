#pragma once

#include "flora/backbone.hpp"

namespace flora {

struct PadRecord {
  int64_t h = 0, w = 0;    // original spatial size
  int64_t hp = 0, wp = 0;  // padded size (multiples of the window)
};

template <class T>
struct FusedPyramid {
  Var<T> f1, f2, f3, f4;
  Var<T> g1, g2, g3, g4;  // confidence gates, same shapes as f1..f4
};

/// Reflect-pads to window multiples (bottom/right) and emits row-major
/// windows [n, w*w, C]; the record allows exact inversion.
template <class T>
std::pair<Var<T>, PadRecord> window_partition(Var<T> x, int window);

template <class T>
Var<T> window_fold(Var<T> windows, const PadRecord& rec, int64_t channels, int window);

/// Queries from the SAR side, keys/values from the optical side, softmax per
/// window and head, no positional bias. Optionally exposes the attention
/// weights [n*heads, w*w, w*w].
template <class T>
Var<T> windowed_cross_attention(ParamCtx<T>& P, const std::string& prefix, Var<T> f_sar, Var<T> f_opt, int heads,
                                int window, Var<T>* attn_out = nullptr);

/// z * (1 + tanh(gamma)) + beta with (gamma, beta) predicted from f_opt.
template <class T>
Var<T> film_modulate(ParamCtx<T>& P, const std::string& prefix, Var<T> z, Var<T> f_opt);

/// Eq-style convex blend: f_sar + g * (z - f_sar) with a given gate map.
template <class T>
Var<T> gated_blend(Var<T> f_sar, Var<T> z, Var<T> gate);

/// gate = sigmoid(conv1x1(f_sar)); returns (fused, gate).
template <class T>
std::pair<Var<T>, Var<T>> gated_residual_fuse(ParamCtx<T>& P, const std::string& prefix, Var<T> f_sar, Var<T> z_film);

/// Levels 1..3 fuse (s_l, p_l) directly; level 4 fuses x_m with the aligned
/// p4 (upsampled 2x and 1x1-projected, computed by the caller so the same
/// node can feed distillation).
template <class T>
FusedPyramid<T> fuse_pyramid(ParamCtx<T>& P, const SarFeaturePyramid<T>& sar, const TeacherPyramid<T>& opt,
                             Var<T> p4_aligned, const ModelConfig& cfg, const AblationSet& ablation = {});

/// The shared level-4 alignment: bilinear 2x upsample + 1x1 projection.
template <class T>
Var<T> align_p4(ParamCtx<T>& P, Var<T> p4, const ModelConfig& cfg);

#define FLORA_EXTERN_FUSION(T)                                                                                   \
  extern template std::pair<Var<T>, PadRecord> window_partition(Var<T>, int);                                    \
  extern template Var<T> window_fold(Var<T>, const PadRecord&, int64_t, int);                                    \
  extern template Var<T> windowed_cross_attention(ParamCtx<T>&, const std::string&, Var<T>, Var<T>, int, int,    \
                                                  Var<T>*);                                                      \
  extern template Var<T> film_modulate(ParamCtx<T>&, const std::string&, Var<T>, Var<T>);                        \
  extern template Var<T> gated_blend(Var<T>, Var<T>, Var<T>);                                                    \
  extern template std::pair<Var<T>, Var<T>> gated_residual_fuse(ParamCtx<T>&, const std::string&, Var<T>,        \
                                                                Var<T>);                                         \
  extern template FusedPyramid<T> fuse_pyramid(ParamCtx<T>&, const SarFeaturePyramid<T>&, const TeacherPyramid<T>&, \
                                               Var<T>, const ModelConfig&, const AblationSet&);                  \
  extern template Var<T> align_p4(ParamCtx<T>&, Var<T>, const ModelConfig&);
FLORA_EXTERN_FUSION(float)
FLORA_EXTERN_FUSION(double)
#undef FLORA_EXTERN_FUSION

}  // namespace flora
