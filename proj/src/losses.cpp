#include "flora/losses.hpp"

#include <cmath>

namespace flora {

template <class T>
void LossWeights<T>::validate() const {
  for (T v : {lambda_c, lambda_s, lambda_f, lambda_e, mu_d, mu_b, mu_h, eta, rgb_to_seg_ratio})
    if (v < T(0)) throw std::invalid_argument("loss weights must be >= 0");
  for (T v : {eps_charb, eps_dice, eps_log})
    if (v <= T(0)) throw std::invalid_argument("loss epsilons must be > 0");
}

std::string LossBreakdown::first_non_finite() const {
  const std::pair<const char*, double> terms[] = {
      {"charb", charb}, {"ssim", ssim},       {"fft", fft},   {"edge", edge},  {"dice", dice}, {"bce", bce},
      {"hydro", hydro}, {"distill", distill}, {"l_rgb", l_rgb}, {"l_seg", l_seg}, {"total", total}};
  for (const auto& [name, v] : terms)
    if (!std::isfinite(v)) return name;
  return {};
}

template <class T>
Var<T> luminance(Var<T> x) {
  if (x.shape().size() != 3 || x.shape()[0] != 3)
    throw std::invalid_argument("luminance: expects a 3-channel image");
  return channel_mean(x);
}

template <class T>
Var<T> charbonnier(Var<T> y_hat, Var<T> y, T eps) {
  Var<T> d = sub(y_hat, y);
  return mean_all(sqrt_safe(affine(square(d), T(1), eps)));
}

namespace {

template <class T>
Var<T> box3(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> kernel(Shape{1, 1, 3, 3}, T(1) / T(9));
  return conv2d(pad_reflect(x, 1, 1, 1, 1), g.constant(kernel), Var<T>{}, 1, 0);
}

template <class T>
Var<T> ssim_channel(Var<T> a, Var<T> b) {
  const T c1 = T(0.01) * T(0.01);
  const T c2 = T(0.03) * T(0.03);
  Var<T> mu1 = box3(a);
  Var<T> mu2 = box3(b);
  Var<T> mu1_sq = square(mu1);
  Var<T> mu2_sq = square(mu2);
  Var<T> mu12 = mul(mu1, mu2);
  Var<T> sigma1 = sub(box3(square(a)), mu1_sq);
  Var<T> sigma2 = sub(box3(square(b)), mu2_sq);
  Var<T> sigma12 = sub(box3(mul(a, b)), mu12);
  Var<T> num = mul(affine(mu12, T(2), c1), affine(sigma12, T(2), c2));
  Var<T> den = mul(affine(add(mu1_sq, mu2_sq), T(1), c1), affine(add(sigma1, sigma2), T(1), c2));
  return mean_all(divide(num, den));
}

}  // namespace

template <class T>
Var<T> ssim_loss(Var<T> y_hat, Var<T> y) {
  if (!shape_eq(y_hat.shape(), y.shape())) throw std::invalid_argument("ssim_loss: shape mismatch");
  const int64_t c = y_hat.shape()[0];
  Var<T> acc;
  for (int64_t ch = 0; ch < c; ++ch) {
    Var<T> s = ssim_channel(slice_ch(y_hat, ch, ch + 1), slice_ch(y, ch, ch + 1));
    acc = ch == 0 ? s : add(acc, s);
  }
  return affine(acc, T(-1) / static_cast<T>(c), T(1));  // 1 - mean ssim
}

template <class T>
Var<T> fft_loss(Var<T> y_hat, Var<T> y, T eps_log) {
  if (!shape_eq(y_hat.shape(), y.shape())) throw std::invalid_argument("fft_loss: shape mismatch");
  Var<T> a = log_mag_dft2(luminance(y_hat), eps_log);
  Var<T> b = log_mag_dft2(luminance(y), eps_log);
  return mean_all(abs_val(sub(a, b)));
}

template <class T>
std::pair<Var<T>, Var<T>> sobel_gradients(Var<T> x) {
  Graph<T>& g = *x.g;
  Tensor<T> kx(Shape{1, 1, 3, 3});
  Tensor<T> ky(Shape{1, 1, 3, 3});
  const T vx[9] = {-1, 0, 1, -2, 0, 2, -1, 0, 1};
  const T vy[9] = {-1, -2, -1, 0, 0, 0, 1, 2, 1};
  for (int i = 0; i < 9; ++i) {
    kx.data[static_cast<size_t>(i)] = vx[i];
    ky.data[static_cast<size_t>(i)] = vy[i];
  }
  Var<T> padded = pad_reflect(x, 1, 1, 1, 1);
  return {conv2d(padded, g.constant(kx), Var<T>{}, 1, 0), conv2d(padded, g.constant(ky), Var<T>{}, 1, 0)};
}

namespace {

template <class T>
Var<T> sobel_magnitude(Var<T> single_channel) {
  auto [gx, gy] = sobel_gradients(single_channel);
  return sqrt_safe(add(square(gx), square(gy)));
}

}  // namespace

template <class T>
Var<T> edge_loss(Var<T> y_hat, Var<T> y) {
  if (!shape_eq(y_hat.shape(), y.shape())) throw std::invalid_argument("edge_loss: shape mismatch");
  Var<T> ma = sobel_magnitude(luminance(y_hat));
  Var<T> mb = sobel_magnitude(luminance(y));
  return mean_all(abs_val(sub(ma, mb)));
}

template <class T>
Var<T> dice_loss(Var<T> m_hat, Var<T> m, T eps) {
  if (!shape_eq(m_hat.shape(), m.shape())) throw std::invalid_argument("dice_loss: shape mismatch");
  Var<T> inter = sum_all(mul(m_hat, m));
  Var<T> denom = affine(add(sum_all(m_hat), sum_all(m)), T(1), eps);
  return affine(divide(affine(inter, T(2), T(0)), denom), T(-1), T(1));
}

template <class T>
Var<T> bce_loss(Var<T> m_hat, Var<T> m) {
  if (!shape_eq(m_hat.shape(), m.shape())) throw std::invalid_argument("bce_loss: shape mismatch");
  const T lo = T(1e-7);
  Var<T> p = clamp(m_hat, lo, T(1) - lo);
  Var<T> pos = mul(m, log_val(p));
  Var<T> neg = mul(affine(m, T(-1), T(1)), log_val(affine(p, T(-1), T(1))));
  return affine(mean_all(add(pos, neg)), T(-1), T(0));
}

Tensor<uint8_t> boundary_band(const Tensor<float>& mask, int radius) {
  const int64_t h = mask.shape[1], w = mask.shape[2];
  Tensor<uint8_t> band(mask.shape);
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) {
      bool has0 = false, has1 = false;
      for (int64_t dy = -radius; dy <= radius; ++dy) {
        const int64_t yy = y + dy;
        if (yy < 0 || yy >= h) continue;
        for (int64_t dx = -radius; dx <= radius; ++dx) {
          const int64_t xx = x + dx;
          if (xx < 0 || xx >= w) continue;
          (mask.at3(0, yy, xx) > 0.5f ? has1 : has0) = true;
        }
      }
      band.at3(0, y, x) = (has0 && has1) ? 1 : 0;
    }
  return band;
}

template <class T>
Var<T> hydro_edge_loss(Var<T> y_hat, Var<T> sar, const Tensor<uint8_t>& band) {
  auto [ax, ay] = sobel_gradients(luminance(y_hat));
  auto [bx, by] = sobel_gradients(channel_mean(sar));
  return hydro_cosine(ax, ay, bx, by, band);
}

template <class T>
Var<T> distill_loss(ParamCtx<T>& P, const FusedPyramid<T>& fused, const TeacherPyramid<T>& teacher,
                    Var<T> p4_aligned) {
  (void)P;
  const Var<T> f[4] = {fused.f1, fused.f2, fused.f3, fused.f4};
  const Var<T> t[4] = {teacher.p1, teacher.p2, teacher.p3, p4_aligned};
  Var<T> acc;
  for (int l = 0; l < 4; ++l) {
    Var<T> term = mean_all(abs_val(sub(f[l], stop_grad(t[l]))));
    acc = l == 0 ? term : add(acc, term);
  }
  return acc;
}

template <class T>
std::pair<Var<T>, LossBreakdown> total_loss(ParamCtx<T>& P, const ForwardOutput<T>& out, Var<T> y, Var<T> m,
                                            Var<T> sar, const LossWeights<T>& w) {
  w.validate();
  Graph<T>& g = P.graph();

  Var<T> charb = charbonnier(out.y_hat, y, w.eps_charb);
  Var<T> ssim = ssim_loss(out.y_hat, y);
  Var<T> fft = fft_loss(out.y_hat, y, w.eps_log);
  Var<T> edge = edge_loss(out.y_hat, y);

  Var<T> dice = dice_loss(out.m_hat, m, w.eps_dice);
  Var<T> bce = bce_loss(out.m_hat, m);
  const Tensor<uint8_t> band = boundary_band(tensor_cast<float>(m.val()), 1);
  Var<T> hydro = hydro_edge_loss(out.y_hat_seg, sar, band);

  Var<T> distill = distill_loss(P, out.fused, out.teacher, out.p4_aligned);

  Var<T> l_rgb = add(add(affine(charb, w.lambda_c, T(0)), affine(ssim, w.lambda_s, T(0))),
                     add(affine(fft, w.lambda_f, T(0)), affine(edge, w.lambda_e, T(0))));
  Var<T> l_seg = add(add(affine(dice, w.mu_d, T(0)), affine(bce, w.mu_b, T(0))), affine(hydro, w.mu_h, T(0)));
  Var<T> total = add(add(l_rgb, affine(l_seg, w.rgb_to_seg_ratio, T(0))), affine(distill, w.eta, T(0)));
  (void)g;

  LossBreakdown bd;
  bd.charb = static_cast<double>(charb.scalar());
  bd.ssim = static_cast<double>(ssim.scalar());
  bd.fft = static_cast<double>(fft.scalar());
  bd.edge = static_cast<double>(edge.scalar());
  bd.dice = static_cast<double>(dice.scalar());
  bd.bce = static_cast<double>(bce.scalar());
  bd.hydro = static_cast<double>(hydro.scalar());
  bd.distill = static_cast<double>(distill.scalar());
  bd.l_rgb = static_cast<double>(l_rgb.scalar());
  bd.l_seg = static_cast<double>(l_seg.scalar());
  bd.total = static_cast<double>(total.scalar());
  return {total, bd};
}

#define FLORA_INST_LOSSES(T)                                                                       \
  template struct LossWeights<T>;                                                                  \
  template Var<T> luminance(Var<T>);                                                               \
  template Var<T> charbonnier(Var<T>, Var<T>, T);                                                  \
  template Var<T> ssim_loss(Var<T>, Var<T>);                                                       \
  template Var<T> fft_loss(Var<T>, Var<T>, T);                                                     \
  template Var<T> edge_loss(Var<T>, Var<T>);                                                       \
  template Var<T> dice_loss(Var<T>, Var<T>, T);                                                    \
  template Var<T> bce_loss(Var<T>, Var<T>);                                                        \
  template std::pair<Var<T>, Var<T>> sobel_gradients(Var<T>);                                      \
  template Var<T> hydro_edge_loss(Var<T>, Var<T>, const Tensor<uint8_t>&);                         \
  template Var<T> distill_loss(ParamCtx<T>&, const FusedPyramid<T>&, const TeacherPyramid<T>&, Var<T>); \
  template std::pair<Var<T>, LossBreakdown> total_loss(ParamCtx<T>&, const ForwardOutput<T>&, Var<T>, Var<T>, \
                                                       Var<T>, const LossWeights<T>&);
FLORA_INST_LOSSES(float)
FLORA_INST_LOSSES(double)

}  // namespace flora
