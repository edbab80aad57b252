#include "flora/fusion.hpp"

#include <cmath>

namespace flora {

template <class T>
std::pair<Var<T>, PadRecord> window_partition(Var<T> x, int window) {
  if (window < 1) throw std::invalid_argument("window_partition: window must be >= 1");
  const Shape& s = x.shape();
  PadRecord rec;
  rec.h = s[1];
  rec.w = s[2];
  rec.hp = (rec.h + window - 1) / window * window;
  rec.wp = (rec.w + window - 1) / window * window;
  Var<T> padded = x;
  if (rec.hp != rec.h || rec.wp != rec.w) padded = pad_reflect(x, 0, rec.hp - rec.h, 0, rec.wp - rec.w);
  return {tile_windows(padded, window), rec};
}

template <class T>
Var<T> window_fold(Var<T> windows, const PadRecord& rec, int64_t channels, int window) {
  Var<T> full = untile_windows(windows, channels, rec.hp, rec.wp, window);
  if (rec.hp != rec.h || rec.wp != rec.w) full = crop_spatial(full, rec.h, rec.w);
  return full;
}

template <class T>
Var<T> windowed_cross_attention(ParamCtx<T>& P, const std::string& prefix, Var<T> f_sar, Var<T> f_opt, int heads,
                                int window, Var<T>* attn_out) {
  if (!shape_eq(f_sar.shape(), f_opt.shape()))
    throw std::invalid_argument("windowed_cross_attention: SAR/optical shapes differ");
  const int64_t c = f_sar.shape()[0];
  if (c % heads) throw std::invalid_argument("windowed_cross_attention: channels not divisible by heads");
  const int64_t dh = c / heads;

  Var<T> q = P.conv(prefix + ".wq", f_sar, c, 1, 1, 0, /*bias=*/false);
  Var<T> k = P.conv(prefix + ".wk", f_opt, c, 1, 1, 0, /*bias=*/false);
  Var<T> v = P.conv(prefix + ".wv", f_opt, c, 1, 1, 0, /*bias=*/false);

  auto [qw, rec] = window_partition(q, window);
  Var<T> kw = window_partition(k, window).first;
  Var<T> vw = window_partition(v, window).first;

  Var<T> qh = split_heads(qw, heads);
  Var<T> kh = split_heads(kw, heads);
  Var<T> vh = split_heads(vw, heads);

  Var<T> scores = affine(bmm_nt(qh, kh), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh))), T(0));
  Var<T> attn = softmax_lastdim(scores);
  if (attn_out) *attn_out = attn;

  Var<T> ctx = merge_heads(bmm(attn, vh), heads);
  Var<T> folded = window_fold(ctx, rec, c, window);
  return P.conv(prefix + ".wo", folded, c, 1, 1, 0, /*bias=*/false);
}

template <class T>
Var<T> film_modulate(ParamCtx<T>& P, const std::string& prefix, Var<T> z, Var<T> f_opt) {
  if (z.shape()[1] != f_opt.shape()[1] || z.shape()[2] != f_opt.shape()[2])
    throw std::invalid_argument("film_modulate: spatial shapes differ");
  const int64_t c = z.shape()[0];
  Var<T> hmid = silu(P.conv(prefix + ".film.0", f_opt, c, 1, 1, 0));
  Var<T> gb = P.conv(prefix + ".film.1", hmid, 2 * c, 1, 1, 0);
  Var<T> gamma = slice_ch(gb, 0, c);
  Var<T> beta = slice_ch(gb, c, 2 * c);
  Var<T> scale = affine(tanh_act(gamma), T(1), T(1));  // 1 + tanh in (0,2)
  return add(mul(z, scale), beta);
}

template <class T>
Var<T> gated_blend(Var<T> f_sar, Var<T> z, Var<T> gate) {
  return add(f_sar, mul(gate, sub(z, f_sar)));
}

template <class T>
std::pair<Var<T>, Var<T>> gated_residual_fuse(ParamCtx<T>& P, const std::string& prefix, Var<T> f_sar, Var<T> z_film) {
  if (!shape_eq(f_sar.shape(), z_film.shape()))
    throw std::invalid_argument("gated_residual_fuse: shape mismatch");
  const int64_t c = f_sar.shape()[0];
  // zero-initialized kernel: the gate opens at 0.5 and learns from there
  Var<T> gate = sigmoid(P.conv(prefix + ".gate", f_sar, c, 1, 1, 0, /*bias=*/true, Init::kZeros));
  return {gated_blend(f_sar, z_film, gate), gate};
}

template <class T>
Var<T> align_p4(ParamCtx<T>& P, Var<T> p4, const ModelConfig& cfg) {
  return P.conv("fusion.level4.align", upsample_bilinear2x(p4), 8 * cfg.base_channels, 1, 1, 0);
}

template <class T>
FusedPyramid<T> fuse_pyramid(ParamCtx<T>& P, const SarFeaturePyramid<T>& sar, const TeacherPyramid<T>& opt,
                             Var<T> p4_aligned, const ModelConfig& cfg, const AblationSet& ablation) {
  const bool no_film = ablation.count(Ablation::kNoFilm) != 0;
  FusedPyramid<T> out;
  const Var<T> sar_side[4] = {sar.s1, sar.s2, sar.s3, sar.x_m};
  const Var<T> opt_side[4] = {opt.p1, opt.p2, opt.p3, p4_aligned};
  Var<T>* fused[4] = {&out.f1, &out.f2, &out.f3, &out.f4};
  Var<T>* gates[4] = {&out.g1, &out.g2, &out.g3, &out.g4};
  for (int l = 0; l < 4; ++l) {
    const std::string prefix = "fusion.level" + std::to_string(l + 1);
    if (!shape_eq(sar_side[l].shape(), opt_side[l].shape()))
      throw std::invalid_argument(prefix + ": incompatible pyramids " + shape_str(sar_side[l].shape()) + " vs " +
                                  shape_str(opt_side[l].shape()));
    Var<T> z = windowed_cross_attention(P, prefix, sar_side[l], opt_side[l], cfg.heads, cfg.window);
    if (!no_film) z = film_modulate(P, prefix, z, opt_side[l]);
    auto [f, gate] = gated_residual_fuse(P, prefix, sar_side[l], z);
    *fused[l] = f;
    *gates[l] = gate;
  }
  return out;
}

#define FLORA_INST_FUSION(T)                                                                                \
  template std::pair<Var<T>, PadRecord> window_partition(Var<T>, int);                                      \
  template Var<T> window_fold(Var<T>, const PadRecord&, int64_t, int);                                      \
  template Var<T> windowed_cross_attention(ParamCtx<T>&, const std::string&, Var<T>, Var<T>, int, int,      \
                                           Var<T>*);                                                       \
  template Var<T> film_modulate(ParamCtx<T>&, const std::string&, Var<T>, Var<T>);                          \
  template Var<T> gated_blend(Var<T>, Var<T>, Var<T>);                                                      \
  template std::pair<Var<T>, Var<T>> gated_residual_fuse(ParamCtx<T>&, const std::string&, Var<T>, Var<T>); \
  template FusedPyramid<T> fuse_pyramid(ParamCtx<T>&, const SarFeaturePyramid<T>&, const TeacherPyramid<T>&, \
                                        Var<T>, const ModelConfig&, const AblationSet&);                    \
  template Var<T> align_p4(ParamCtx<T>&, Var<T>, const ModelConfig&);
FLORA_INST_FUSION(float)
FLORA_INST_FUSION(double)

}  // namespace flora
