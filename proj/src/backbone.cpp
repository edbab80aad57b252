#include "flora/backbone.hpp"

#include <stdexcept>

namespace flora {

void ModelConfig::validate() const {
  if (base_channels < 4) throw std::invalid_argument("base_channels must be >= 4");
  if (window < 1) throw std::invalid_argument("window must be >= 1");
  if (heads < 1) throw std::invalid_argument("heads must be >= 1");
  if (prior_channels != 3 && prior_channels != 4) throw std::invalid_argument("prior_channels must be 3 or 4");
  // every fusion level channel count must split across heads
  for (int mult : {1, 2, 4, 8})
    if ((base_channels * mult) % heads != 0)
      throw std::invalid_argument("level channels " + std::to_string(base_channels * mult) +
                                  " not divisible by heads " + std::to_string(heads));
}

namespace {

template <class T>
Var<T> sar_stage(ParamCtx<T>& P, const std::string& prefix, Var<T> x, int64_t out_ch) {
  x = P.conv_gn_silu(prefix + ".conv1", x, out_ch);
  return P.conv_gn_silu(prefix + ".conv2", x, out_ch);
}

template <class T>
SarFeaturePyramid<T> encoder_trunk(ParamCtx<T>& P, const std::string& root, Var<T> sar, int B) {
  SarFeaturePyramid<T> pyr;
  Var<T> t = sar_stage(P, root + ".stage1", sar, B);
  pyr.s1 = P.conv(root + ".stage1.down", t, B, 3, 2, 1);
  t = sar_stage(P, root + ".stage2", pyr.s1, 2 * B);
  pyr.s2 = P.conv(root + ".stage2.down", t, 2 * B, 3, 2, 1);
  t = sar_stage(P, root + ".stage3", pyr.s2, 4 * B);
  pyr.s3 = P.conv(root + ".stage3.down", t, 4 * B, 3, 2, 1);
  pyr.x_m = sar_stage(P, root + ".stage4", pyr.s3, 8 * B);
  return pyr;
}

}  // namespace

template <class T>
SarFeaturePyramid<T> encode_sar(ParamCtx<T>& P, Var<T> sar, const ModelConfig& cfg) {
  const Shape& s = sar.shape();
  if (s.size() != 3 || s[0] != 2) throw std::invalid_argument("encode_sar: input must be [2,H,W]");
  if (s[1] % 8 || s[2] % 8) throw std::invalid_argument("encode_sar: H and W must be divisible by 8");
  return encoder_trunk(P, "backbone.sar", sar, cfg.base_channels);
}

template <class T>
TeacherPyramid<T> teacher_pyramid(ParamCtx<T>& P, Var<T> prior, const ModelConfig& cfg) {
  const Shape& s = prior.shape();
  if (s.size() != 3 || s[0] != cfg.prior_channels)
    throw std::invalid_argument("teacher_pyramid: expected " + std::to_string(cfg.prior_channels) +
                                " prior channels, got " + std::to_string(s.empty() ? 0 : s[0]));
  if (s[1] % 16 || s[2] % 16) throw std::invalid_argument("teacher_pyramid: H and W must be divisible by 16");

  const int B = cfg.base_channels;
  TeacherPyramid<T> pyr;
  Var<T> x = prior;
  Var<T>* levels[4] = {&pyr.p1, &pyr.p2, &pyr.p3, &pyr.p4};
  for (int l = 0; l < 4; ++l) {
    const std::string prefix = "backbone.teacher.level" + std::to_string(l + 1);
    const int64_t out_ch = static_cast<int64_t>(B) << l;
    x = P.conv_gn_silu(prefix + ".conv1", x, out_ch);
    x = P.conv_gn_silu(prefix + ".conv2", x, out_ch);
    x = maxpool2x2(x);
    *levels[l] = x;
  }
  return pyr;
}

template <class T>
TeacherPyramid<T> prior_pyramid(ParamCtx<T>& P, Var<T> sar, const ModelConfig& cfg) {
  const Shape& s = sar.shape();
  if (s.size() != 3 || s[0] != 2) throw std::invalid_argument("prior_pyramid: input must be [2,H,W]");
  if (s[1] % 16 || s[2] % 16) throw std::invalid_argument("prior_pyramid: H and W must be divisible by 16");

  const int B = cfg.base_channels;
  SarFeaturePyramid<T> trunk = encoder_trunk(P, "backbone.prior", sar, B);
  TeacherPyramid<T> pyr;
  pyr.p1 = P.conv("backbone.prior.head1", trunk.s1, B, 1, 1, 0);
  pyr.p2 = P.conv("backbone.prior.head2", trunk.s2, 2 * B, 1, 1, 0);
  pyr.p3 = P.conv("backbone.prior.head3", trunk.s3, 4 * B, 1, 1, 0);
  // x_m sits at H/8; a stride-2 1x1 head lands p4 on the teacher's H/16 grid
  pyr.p4 = P.conv("backbone.prior.head4", trunk.x_m, 8 * B, 1, 2, 0);
  return pyr;
}

#define FLORA_INST_BACKBONE(T)                                                             \
  template SarFeaturePyramid<T> encode_sar(ParamCtx<T>&, Var<T>, const ModelConfig&);      \
  template TeacherPyramid<T> teacher_pyramid(ParamCtx<T>&, Var<T>, const ModelConfig&);    \
  template TeacherPyramid<T> prior_pyramid(ParamCtx<T>&, Var<T>, const ModelConfig&);
FLORA_INST_BACKBONE(float)
FLORA_INST_BACKBONE(double)

}  // namespace flora
