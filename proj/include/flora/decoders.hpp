#pragma once

#include <optional>

#include "flora/fusion.hpp"

namespace flora {

template <class T>
struct ForwardOutput {
  Var<T> y_hat;      // [3,H,W] in (0,1)
  Var<T> m_hat;      // [1,H,W] in (0,1)
  /// RGB decode of the segmentation-side pyramid; the hydrology edge term
  /// consumes this so its gradient honors the seg decoupling flag. Same
  /// node as y_hat whenever the two branch pyramids coincide.
  Var<T> y_hat_seg;
  FusedPyramid<T> fused;
  TeacherPyramid<T> teacher;  // guidance pyramid actually used (teacher or prior)
  Var<T> p4_aligned;          // shared upsample+project of teacher.p4
  bool used_teacher_path = false;
};

struct ForwardOptions {
  AblationSet ablation;
  /// build the seg-side RGB decode needed by the hydrology term
  bool hydro_decode = false;
};

/// Applies the stop-gradient flags; values pass through unchanged.
template <class T>
std::pair<FusedPyramid<T>, FusedPyramid<T>> decouple(const FusedPyramid<T>& fused, const ModelConfig& cfg,
                                                     const AblationSet& ablation = {});

template <class T>
Var<T> decode_rgb(ParamCtx<T>& P, const FusedPyramid<T>& pyr, const ModelConfig& cfg);

template <class T>
Var<T> decode_mask(ParamCtx<T>& P, const FusedPyramid<T>& pyr, const ModelConfig& cfg);

/// Full pass: encoders -> fusion latent -> decoupling -> both decoders.
/// Uses the teacher path when a prior is given (and not ablated away),
/// otherwise the SAR-driven prior path.
template <class T>
ForwardOutput<T> forward(ParamCtx<T>& P, const ModelConfig& cfg, const Tensor<T>& sar, const Tensor<T>* prior,
                         const ForwardOptions& opts = {});

#define FLORA_EXTERN_DECODERS(T)                                                                          \
  extern template std::pair<FusedPyramid<T>, FusedPyramid<T>> decouple(const FusedPyramid<T>&,            \
                                                                       const ModelConfig&, const AblationSet&); \
  extern template Var<T> decode_rgb(ParamCtx<T>&, const FusedPyramid<T>&, const ModelConfig&);            \
  extern template Var<T> decode_mask(ParamCtx<T>&, const FusedPyramid<T>&, const ModelConfig&);           \
  extern template ForwardOutput<T> forward(ParamCtx<T>&, const ModelConfig&, const Tensor<T>&,            \
                                           const Tensor<T>*, const ForwardOptions&);
FLORA_EXTERN_DECODERS(float)
FLORA_EXTERN_DECODERS(double)
#undef FLORA_EXTERN_DECODERS

}  // namespace flora
