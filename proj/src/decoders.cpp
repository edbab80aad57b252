#include "flora/decoders.hpp"

#include <cstdio>

namespace flora {

template <class T>
std::pair<FusedPyramid<T>, FusedPyramid<T>> decouple(const FusedPyramid<T>& fused, const ModelConfig& cfg,
                                                     const AblationSet& ablation) {
  const bool no_decouple = ablation.count(Ablation::kNoDecouple) != 0;
  const bool seg_stop = !no_decouple && cfg.seg_from_rgb;
  const bool rgb_stop = !no_decouple && cfg.rgb_from_seg;
  if (seg_stop && rgb_stop)
    std::fprintf(stderr, "decouple: both stop flags set; the trunk receives only distillation gradients\n");

  auto stopped = [](const FusedPyramid<T>& p) {
    FusedPyramid<T> s = p;
    s.f1 = stop_grad(p.f1);
    s.f2 = stop_grad(p.f2);
    s.f3 = stop_grad(p.f3);
    s.f4 = stop_grad(p.f4);
    return s;
  };
  FusedPyramid<T> f_rgb = rgb_stop ? stopped(fused) : fused;
  FusedPyramid<T> f_seg = seg_stop ? stopped(fused) : fused;
  return {f_rgb, f_seg};
}

namespace {

template <class T>
Var<T> decode_branch(ParamCtx<T>& P, const std::string& root, const FusedPyramid<T>& pyr, int B, int64_t out_ch) {
  // bottleneck merge: f4 and f3 share the H/8 grid
  Var<T> d = concat_ch<T>({pyr.f4, pyr.f3});
  d = P.conv_gn_silu(root + ".merge.conv1", d, 4 * B);
  d = P.conv_gn_silu(root + ".merge.conv2", d, 4 * B);

  d = upsample_bilinear2x(d);
  d = concat_ch<T>({d, pyr.f2});
  d = P.conv_gn_silu(root + ".up1.conv1", d, 2 * B);
  d = P.conv_gn_silu(root + ".up1.conv2", d, 2 * B);

  d = upsample_bilinear2x(d);
  d = concat_ch<T>({d, pyr.f1});
  d = P.conv_gn_silu(root + ".up2.conv1", d, B);
  d = P.conv_gn_silu(root + ".up2.conv2", d, B);

  d = upsample_bilinear2x(d);
  d = P.conv_gn_silu(root + ".up3.conv1", d, B);
  d = P.conv_gn_silu(root + ".up3.conv2", d, B);

  return sigmoid(P.conv(root + ".head", d, out_ch, 1, 1, 0));
}

}  // namespace

template <class T>
Var<T> decode_rgb(ParamCtx<T>& P, const FusedPyramid<T>& pyr, const ModelConfig& cfg) {
  return decode_branch(P, "dec.rgb", pyr, cfg.base_channels, 3);
}

template <class T>
Var<T> decode_mask(ParamCtx<T>& P, const FusedPyramid<T>& pyr, const ModelConfig& cfg) {
  return decode_branch(P, "dec.mask", pyr, cfg.base_channels, 1);
}

template <class T>
ForwardOutput<T> forward(ParamCtx<T>& P, const ModelConfig& cfg, const Tensor<T>& sar, const Tensor<T>* prior,
                         const ForwardOptions& opts) {
  cfg.validate();
  if (sar.rank() != 3 || sar.shape[0] != 2) throw std::invalid_argument("forward: SAR must be [2,H,W]");
  if (sar.shape[1] % 16 || sar.shape[2] % 16)
    throw std::invalid_argument("forward: H and W must be divisible by 16");

  Graph<T>& g = P.graph();
  Var<T> sar_in = g.constant(sar);

  ForwardOutput<T> out;
  SarFeaturePyramid<T> sar_pyr = encode_sar(P, sar_in, cfg);

  const bool force_prior = opts.ablation.count(Ablation::kNoTeacher) != 0;
  if (prior != nullptr && !force_prior) {
    out.teacher = teacher_pyramid(P, g.constant(*prior), cfg);
    out.used_teacher_path = true;
  } else {
    out.teacher = prior_pyramid(P, sar_in, cfg);
  }
  out.p4_aligned = align_p4(P, out.teacher.p4, cfg);
  out.fused = fuse_pyramid(P, sar_pyr, out.teacher, out.p4_aligned, cfg, opts.ablation);

  auto [f_rgb, f_seg] = decouple(out.fused, cfg, opts.ablation);
  out.y_hat = decode_rgb(P, f_rgb, cfg);
  out.m_hat = decode_mask(P, f_seg, cfg);

  const bool branches_match = f_rgb.f1.id == f_seg.f1.id;
  if (opts.hydro_decode && !branches_match) {
    out.y_hat_seg = decode_rgb(P, f_seg, cfg);
  } else {
    out.y_hat_seg = out.y_hat;
  }
  return out;
}

#define FLORA_INST_DECODERS(T)                                                                     \
  template std::pair<FusedPyramid<T>, FusedPyramid<T>> decouple(const FusedPyramid<T>&,            \
                                                                const ModelConfig&, const AblationSet&); \
  template Var<T> decode_rgb(ParamCtx<T>&, const FusedPyramid<T>&, const ModelConfig&);            \
  template Var<T> decode_mask(ParamCtx<T>&, const FusedPyramid<T>&, const ModelConfig&);           \
  template ForwardOutput<T> forward(ParamCtx<T>&, const ModelConfig&, const Tensor<T>&,            \
                                    const Tensor<T>*, const ForwardOptions&);
FLORA_INST_DECODERS(float)
FLORA_INST_DECODERS(double)

}  // namespace flora
