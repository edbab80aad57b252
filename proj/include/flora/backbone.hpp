#pragma once

#include <set>
#include <string>

#include "flora/nn.hpp"

namespace flora {

struct ModelConfig {
  int base_channels = 32;   // B
  int window = 8;           // attention window side
  int heads = 4;            // attention heads at every level
  bool seg_from_rgb = true; // stop segmentation gradients at the shared trunk
  bool rgb_from_seg = false;
  int prior_channels = 4;   // C_p, 3 = RGB, 4 = RGB+NDVI

  void validate() const;
};

enum class Ablation { kNoFilm, kNoTeacher, kNoDecouple };
using AblationSet = std::set<Ablation>;

template <class T>
struct SarFeaturePyramid {
  Var<T> s1, s2, s3, x_m;  // B@H/2, 2B@H/4, 4B@H/8, 8B@H/8
};

template <class T>
struct TeacherPyramid {
  Var<T> p1, p2, p3, p4;  // 2^{l-1}B @ H/2^l
};

/// Strided-conv encoder over the two SAR channels; x_m is a channel-doubling
/// bottleneck at the s3 resolution.
template <class T>
SarFeaturePyramid<T> encode_sar(ParamCtx<T>& P, Var<T> sar, const ModelConfig& cfg);

/// Conv-GN-SiLU blocks with max-pool downsampling at each of four levels.
template <class T>
TeacherPyramid<T> teacher_pyramid(ParamCtx<T>& P, Var<T> prior, const ModelConfig& cfg);

/// SAR-driven surrogate with the teacher's exact shape contract, so the
/// fusion pathway accepts either source unchanged.
template <class T>
TeacherPyramid<T> prior_pyramid(ParamCtx<T>& P, Var<T> sar, const ModelConfig& cfg);

#define FLORA_EXTERN_BACKBONE(T)                                                       \
  extern template SarFeaturePyramid<T> encode_sar(ParamCtx<T>&, Var<T>, const ModelConfig&); \
  extern template TeacherPyramid<T> teacher_pyramid(ParamCtx<T>&, Var<T>, const ModelConfig&); \
  extern template TeacherPyramid<T> prior_pyramid(ParamCtx<T>&, Var<T>, const ModelConfig&);
FLORA_EXTERN_BACKBONE(float)
FLORA_EXTERN_BACKBONE(double)
#undef FLORA_EXTERN_BACKBONE

}  // namespace flora
