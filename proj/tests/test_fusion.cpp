#include <doctest.h>

#include <cmath>

#include "flora/backbone.hpp"
#include "flora/fusion.hpp"
#include "test_support.hpp"

using namespace flora;
using namespace flora::testing;

TEST_SUITE_BEGIN("fusion");

TEST_CASE("window partition counts and exact fold inversion") {
  Graph<double> g;
  SUBCASE("8x8 w=8: one window") {
    auto [wins, rec] = window_partition(g.constant(random_tensor({2, 8, 8}, 1)), 8);
    CHECK(wins.shape() == Shape{1, 64, 2});
    CHECK(rec.hp == 8);
  }
  SUBCASE("8x8 w=4: four windows") {
    auto [wins, rec] = window_partition(g.constant(random_tensor({2, 8, 8}, 1)), 4);
    CHECK(wins.shape() == Shape{4, 16, 2});
    (void)rec;
  }
  SUBCASE("10x10 w=8 pads to 16 and folds back exactly") {
    const Tensor<double> x = random_tensor({3, 10, 10}, 2);
    Var<double> xv = g.constant(x);
    auto [wins, rec] = window_partition(xv, 8);
    CHECK(wins.shape() == Shape{4, 64, 3});
    CHECK(rec.hp == 16);
    Var<double> restored = window_fold(wins, rec, 3, 8);
    CHECK(restored.shape() == Shape{3, 10, 10});
    CHECK(restored.val().data == x.data);
  }
}

TEST_CASE("attention over a constant optical field returns Wo*Wv*c everywhere") {
  ParamStore<double> store(3);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  const int64_t C = 4;
  const Tensor<double> f_sar = random_tensor({C, 4, 4}, 5);
  Tensor<double> f_opt(Shape{C, 4, 4});
  Rng r(7);
  std::vector<double> cvec(C);
  for (int64_t c = 0; c < C; ++c) {
    cvec[static_cast<size_t>(c)] = r.uniform(-1, 1);
    for (int64_t i = 0; i < 16; ++i) f_opt.data[static_cast<size_t>(c * 16 + i)] = cvec[static_cast<size_t>(c)];
  }
  Var<double> out = windowed_cross_attention(P, "fusion.level1", g.constant(f_sar), g.constant(f_opt), 2, 2);
  // expected: Wo * (Wv * c) at every pixel regardless of the queries
  const Tensor<double>& wv = store.at("fusion.level1.wv.w");
  const Tensor<double>& wo = store.at("fusion.level1.wo.w");
  std::vector<double> vproj(C, 0.0), expect(C, 0.0);
  for (int64_t oc = 0; oc < C; ++oc)
    for (int64_t ic = 0; ic < C; ++ic) vproj[static_cast<size_t>(oc)] += wv.data[static_cast<size_t>(oc * C + ic)] * cvec[static_cast<size_t>(ic)];
  for (int64_t oc = 0; oc < C; ++oc)
    for (int64_t ic = 0; ic < C; ++ic) expect[static_cast<size_t>(oc)] += wo.data[static_cast<size_t>(oc * C + ic)] * vproj[static_cast<size_t>(ic)];
  for (int64_t c = 0; c < C; ++c)
    for (int64_t i = 0; i < 16; ++i)
      CHECK(out.val().data[static_cast<size_t>(c * 16 + i)] == doctest::Approx(expect[static_cast<size_t>(c)]).epsilon(1e-12));
}

TEST_CASE("identity projections with one-pixel windows return f_opt") {
  ParamStore<double> store(4);
  const int64_t C = 3;
  Tensor<double> eye(Shape{C, C, 1, 1});
  for (int64_t c = 0; c < C; ++c) eye.data[static_cast<size_t>(c * C + c)] = 1.0;
  for (const char* n : {"fusion.level1.wq.w", "fusion.level1.wk.w", "fusion.level1.wv.w", "fusion.level1.wo.w"})
    store.put(n, eye);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  const Tensor<double> f_sar = random_tensor({C, 2, 2}, 8);
  const Tensor<double> f_opt = random_tensor({C, 2, 2}, 9);
  Var<double> out = windowed_cross_attention(P, "fusion.level1", g.constant(f_sar), g.constant(f_opt), 1, 1);
  for (size_t i = 0; i < f_opt.data.size(); ++i) CHECK(out.val().data[i] == doctest::Approx(f_opt.data[i]).epsilon(1e-12));
}

TEST_CASE("windowed attention equals a dense per-window oracle") {
  ParamStore<double> store(11);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  const int64_t C = 4, H = 4, W = 4;
  const int w = 2, heads = 1;
  const Tensor<double> f_sar = random_tensor({C, H, W}, 21);
  const Tensor<double> f_opt = random_tensor({C, H, W}, 22);
  Var<double> attn;
  Var<double> out =
      windowed_cross_attention(P, "fusion.level1", g.constant(f_sar), g.constant(f_opt), heads, w, &attn);

  // naive reference: project with the same kernels, loop windows directly
  auto proj = [&](const Tensor<double>& x, const char* name) {
    const Tensor<double>& k = store.at(name);
    Tensor<double> y(Shape{C, H, W});
    for (int64_t oc = 0; oc < C; ++oc)
      for (int64_t p = 0; p < H * W; ++p) {
        double acc = 0;
        for (int64_t ic = 0; ic < C; ++ic) acc += k.data[static_cast<size_t>(oc * C + ic)] * x.data[static_cast<size_t>(ic * H * W + p)];
        y.data[static_cast<size_t>(oc * H * W + p)] = acc;
      }
    return y;
  };
  const Tensor<double> q = proj(f_sar, "fusion.level1.wq.w");
  const Tensor<double> k = proj(f_opt, "fusion.level1.wk.w");
  const Tensor<double> v = proj(f_opt, "fusion.level1.wv.w");

  Tensor<double> folded(Shape{C, H, W});
  for (int64_t wy = 0; wy < H / w; ++wy)
    for (int64_t wx = 0; wx < W / w; ++wx) {
      // gather tokens
      const int64_t t = w * w;
      std::vector<std::vector<double>> qt(t, std::vector<double>(C)), kt = qt, vt = qt;
      for (int64_t ly = 0; ly < w; ++ly)
        for (int64_t lx = 0; lx < w; ++lx)
          for (int64_t c = 0; c < C; ++c) {
            const int64_t y = wy * w + ly, x = wx * w + lx;
            qt[static_cast<size_t>(ly * w + lx)][static_cast<size_t>(c)] = q.at3(c, y, x);
            kt[static_cast<size_t>(ly * w + lx)][static_cast<size_t>(c)] = k.at3(c, y, x);
            vt[static_cast<size_t>(ly * w + lx)][static_cast<size_t>(c)] = v.at3(c, y, x);
          }
      for (int64_t i = 0; i < t; ++i) {
        std::vector<double> scores(static_cast<size_t>(t));
        double mx = -1e300;
        for (int64_t j = 0; j < t; ++j) {
          double acc = 0;
          for (int64_t c = 0; c < C; ++c) acc += qt[static_cast<size_t>(i)][static_cast<size_t>(c)] * kt[static_cast<size_t>(j)][static_cast<size_t>(c)];
          scores[static_cast<size_t>(j)] = acc / std::sqrt(static_cast<double>(C));
          mx = std::max(mx, scores[static_cast<size_t>(j)]);
        }
        double denom = 0;
        for (double& sv : scores) {
          sv = std::exp(sv - mx);
          denom += sv;
        }
        for (int64_t c = 0; c < C; ++c) {
          double acc = 0;
          for (int64_t j = 0; j < t; ++j) acc += scores[static_cast<size_t>(j)] / denom * vt[static_cast<size_t>(j)][static_cast<size_t>(c)];
          const int64_t y = wy * w + i / w, x = wx * w + i % w;
          folded.at3(c, y, x) = acc;
        }
      }
    }
  const Tensor<double> expect = proj(folded, "fusion.level1.wo.w");
  for (size_t i = 0; i < expect.data.size(); ++i)
    CHECK(out.val().data[i] == doctest::Approx(expect.data[i]).epsilon(1e-9));

  // attention rows are a probability distribution
  const Shape& as = attn.shape();
  for (int64_t rr = 0; rr < as[0] * as[1]; ++rr) {
    double acc = 0;
    for (int64_t j = 0; j < as[2]; ++j) acc += attn.val().data[static_cast<size_t>(rr * as[2] + j)];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("padding never leaks into interior windows") {
  // attention on a 6x6 map (padded to 8) must match attention on the 4x4
  // top-left crop within the window fully inside the original extent
  ParamStore<double> store(13);
  const int64_t C = 2;
  const Tensor<double> sar6 = random_tensor({C, 6, 6}, 31);
  const Tensor<double> opt6 = random_tensor({C, 6, 6}, 32);
  Tensor<double> sar4(Shape{C, 4, 4}), opt4(Shape{C, 4, 4});
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x) {
        sar4.at3(c, y, x) = sar6.at3(c, y, x);
        opt4.at3(c, y, x) = opt6.at3(c, y, x);
      }
  Graph<double> g;
  ParamCtx<double> P(g, store);
  Var<double> big = windowed_cross_attention(P, "fusion.level1", g.constant(sar6), g.constant(opt6), 1, 4);
  Var<double> small = windowed_cross_attention(P, "fusion.level1", g.constant(sar4), g.constant(opt4), 1, 4);
  for (int64_t c = 0; c < C; ++c)
    for (int64_t y = 0; y < 4; ++y)
      for (int64_t x = 0; x < 4; ++x)
        CHECK(big.val().at3(c, y, x) == doctest::Approx(small.val().at3(c, y, x)).epsilon(1e-12));
}

TEST_CASE("film with zeroed predictor is identity; scale stays in (0,2)") {
  ParamStore<double> store(17);
  const int64_t C = 3;
  const Tensor<double> z = random_tensor({C, 4, 4}, 41);
  const Tensor<double> opt = random_tensor({C, 4, 4}, 42);

  SUBCASE("gamma=beta=0 -> identity") {
    store.put("f.film.0.w", Tensor<double>(Shape{C, C, 1, 1}));
    store.put("f.film.0.b", Tensor<double>(Shape{C}));
    store.put("f.film.1.w", Tensor<double>(Shape{2 * C, C, 1, 1}));
    store.put("f.film.1.b", Tensor<double>(Shape{2 * C}));
    Graph<double> g;
    ParamCtx<double> P(g, store);
    Var<double> out = film_modulate(P, "f", g.constant(z), g.constant(opt));
    CHECK(out.val().data == z.data);
  }
  SUBCASE("z=0 passes beta through") {
    Graph<double> g;
    ParamCtx<double> P(g, store);
    Var<double> out = film_modulate(P, "f2", g.constant(Tensor<double>(Shape{C, 4, 4})), g.constant(opt));
    // recompute beta = second half of the film stack output
    Var<double> hmid = silu(P.conv("f2.film.0", g.constant(opt), C, 1, 1, 0));
    Var<double> gb = P.conv("f2.film.1", hmid, 2 * C, 1, 1, 0);
    Var<double> beta = slice_ch(gb, C, 2 * C);
    for (size_t i = 0; i < out.val().data.size(); ++i)
      CHECK(out.val().data[i] == doctest::Approx(beta.val().data[i]).epsilon(1e-12));
  }
  SUBCASE("scale bound") {
    // huge positive gamma saturates the scale below 2
    Graph<double> g;
    ParamCtx<double> P(g, store);
    Var<double> gamma = g.constant(random_tensor({C, 4, 4}, 43, 50.0, 60.0));
    Var<double> scale = affine(tanh_act(gamma), 1.0, 1.0);
    for (double v : scale.val().data) {
      CHECK(v > 0.0);
      CHECK(v < 2.0 + 1e-15);
    }
  }
}

TEST_CASE("gated blend endpoints and betweenness") {
  Graph<double> g;
  const Tensor<double> a = random_tensor({2, 4, 4}, 51);
  const Tensor<double> b = random_tensor({2, 4, 4}, 52);
  Var<double> av = g.constant(a), bv = g.constant(b);

  Var<double> fused0 = gated_blend(av, bv, g.constant(Tensor<double>(Shape{2, 4, 4}, 0.0)));
  CHECK(fused0.val().data == a.data);
  Var<double> fused1 = gated_blend(av, bv, g.constant(Tensor<double>(Shape{2, 4, 4}, 1.0)));
  CHECK(fused1.val().data == b.data);

  const Tensor<double> gate = random_tensor({2, 4, 4}, 53, 0.0, 1.0);
  Var<double> fused = gated_blend(av, bv, g.constant(gate));
  for (size_t i = 0; i < a.data.size(); ++i) {
    const double lo = std::min(a.data[i], b.data[i]), hi = std::max(a.data[i], b.data[i]);
    CHECK(fused.val().data[i] >= lo - 1e-12);
    CHECK(fused.val().data[i] <= hi + 1e-12);
  }
}

TEST_CASE("fresh gate kernel opens at one half") {
  ParamStore<double> store(19);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  const Tensor<double> f_sar = random_tensor({3, 4, 4}, 61);
  const Tensor<double> z = random_tensor({3, 4, 4}, 62);
  auto [fused, gate] = gated_residual_fuse(P, "f", g.constant(f_sar), g.constant(z));
  for (double v : gate.val().data) CHECK(v == 0.5);
  for (size_t i = 0; i < f_sar.data.size(); ++i)
    CHECK(fused.val().data[i] == doctest::Approx(0.5 * (f_sar.data[i] + z.data[i])).epsilon(1e-12));
}

TEST_CASE("full pyramid fusion shapes follow the SAR side") {
  ModelConfig cfg;
  cfg.base_channels = 8;
  cfg.prior_channels = 4;
  ParamStore<double> store(23);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  auto sar = encode_sar(P, g.constant(random_tensor({2, 256, 256}, 71, 0.0, 1.0)), cfg);
  auto opt = teacher_pyramid(P, g.constant(random_tensor({4, 256, 256}, 72, 0.0, 1.0)), cfg);
  Var<double> p4a = align_p4(P, opt.p4, cfg);
  auto fused = fuse_pyramid(P, sar, opt, p4a, cfg);
  CHECK(fused.f1.shape() == Shape{8, 128, 128});
  CHECK(fused.f2.shape() == Shape{16, 64, 64});
  CHECK(fused.f3.shape() == Shape{32, 32, 32});
  CHECK(fused.f4.shape() == Shape{64, 32, 32});
  CHECK(fused.g4.shape() == fused.f4.shape());
  for (Var<double> gate : {fused.g1, fused.g2, fused.g3, fused.g4})
    for (double v : gate.val().data) {
      CHECK(v > 0.0);
      CHECK(v < 1.0);
    }
}

TEST_CASE("prior-sourced fusion produces identical shapes") {
  ModelConfig cfg;
  cfg.base_channels = 4;
  ParamStore<double> store(29);
  Graph<double> g;
  ParamCtx<double> P(g, store);
  const Tensor<double> sar_in = random_tensor({2, 32, 32}, 81, 0.0, 1.0);
  auto sar = encode_sar(P, g.constant(sar_in), cfg);

  auto teach = teacher_pyramid(P, g.constant(random_tensor({4, 32, 32}, 82, 0.0, 1.0)), cfg);
  auto fused_t = fuse_pyramid(P, sar, teach, align_p4(P, teach.p4, cfg), cfg);

  auto prior = prior_pyramid(P, g.constant(sar_in), cfg);
  auto fused_p = fuse_pyramid(P, sar, prior, align_p4(P, prior.p4, cfg), cfg);

  CHECK(fused_t.f1.shape() == fused_p.f1.shape());
  CHECK(fused_t.f2.shape() == fused_p.f2.shape());
  CHECK(fused_t.f3.shape() == fused_p.f3.shape());
  CHECK(fused_t.f4.shape() == fused_p.f4.shape());
}

TEST_CASE("fusion parameter gradients match finite differences") {
  ParamStore<double> store(31);
  const int64_t C = 4;
  const Tensor<double> f_sar = random_tensor({C, 4, 4}, 91);
  const Tensor<double> f_opt = random_tensor({C, 4, 4}, 92);
  auto rep = fd_param_check(store, [&](ParamCtx<double>& P) {
    Graph<double>& g = P.graph();
    Var<double> z = windowed_cross_attention(P, "fusion.level1", g.constant(f_sar), g.constant(f_opt), 2, 2);
    z = film_modulate(P, "fusion.level1", z, g.constant(f_opt));
    auto [fused, gate] = gated_residual_fuse(P, "fusion.level1", g.constant(f_sar), z);
    (void)gate;
    return sum_all(fused);
  });
  CAPTURE(rep.worst_name);
  CHECK(rep.worst_rel < 1e-3);
}

TEST_SUITE_END();
