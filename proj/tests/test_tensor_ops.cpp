#include <doctest.h>

#include "test_support.hpp"

using namespace flora;
using namespace flora::testing;

TEST_SUITE_BEGIN("tensor_ops");

TEST_CASE("pointwise gradients match finite differences") {
  CHECK(fd_input_check({{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, auto& v) { return add(v[0], v[1]); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, auto& v) { return sub(v[0], v[1]); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, auto& v) { return mul(v[0], v[1]); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 3}, {2, 3, 3}}, [](Graph<double>&, auto& v) { return divide(v[0], v[1]); }, 7, 0.5,
                       2.0) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return silu(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return sigmoid(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return tanh_act(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return sqrt_safe(v[0]); }, 7, 0.5, 2.0) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return log_val(v[0]); }, 7, 0.5, 2.0) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return square(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return abs_val(v[0]); }, 11, 0.2, 1.5) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return affine(v[0], 2.5, -0.3); }) < 1e-5);
}

TEST_CASE("structural op gradients match finite differences") {
  CHECK(fd_input_check({{3, 6, 6}, {4, 3, 3, 3}, {4}},
                       [](Graph<double>&, auto& v) { return conv2d(v[0], v[1], v[2], 1, 1); }) < 1e-5);
  CHECK(fd_input_check({{3, 6, 6}, {4, 3, 3, 3}, {4}},
                       [](Graph<double>&, auto& v) { return conv2d(v[0], v[1], v[2], 2, 1); }) < 1e-5);
  CHECK(fd_input_check({{4, 3, 3}, {4}, {4}},
                       [](Graph<double>&, auto& v) { return group_norm(v[0], v[1], v[2], 2, 1e-5); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 5}}, [](Graph<double>&, auto& v) { return pad_reflect(v[0], 1, 2, 2, 1); }) < 1e-5);
  CHECK(fd_input_check({{2, 5, 5}}, [](Graph<double>&, auto& v) { return crop_spatial(v[0], 3, 4); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 4}}, [](Graph<double>&, auto& v) { return upsample_bilinear2x(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 4}}, [](Graph<double>&, auto& v) { return maxpool2x2(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{3, 4, 4}}, [](Graph<double>&, auto& v) { return tile_windows(v[0], 2); }) < 1e-5);
  CHECK(fd_input_check({{4, 4, 3}}, [](Graph<double>&, auto& v) { return untile_windows(v[0], 3, 4, 4, 2); }) < 1e-5);
  CHECK(fd_input_check({{2, 4, 6}}, [](Graph<double>&, auto& v) { return split_heads(v[0], 2); }) < 1e-5);
  CHECK(fd_input_check({{4, 4, 3}}, [](Graph<double>&, auto& v) { return merge_heads(v[0], 2); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 4}, {2, 4, 5}}, [](Graph<double>&, auto& v) { return bmm(v[0], v[1]); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 4}, {2, 5, 4}}, [](Graph<double>&, auto& v) { return bmm_nt(v[0], v[1]); }) < 1e-5);
  CHECK(fd_input_check({{3, 4, 5}}, [](Graph<double>&, auto& v) { return softmax_lastdim(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{2, 3, 3}, {1, 3, 3}},
                       [](Graph<double>&, auto& v) { return concat_ch<double>({v[0], v[1]}); }) < 1e-5);
  CHECK(fd_input_check({{4, 3, 3}}, [](Graph<double>&, auto& v) { return slice_ch(v[0], 1, 3); }) < 1e-5);
  CHECK(fd_input_check({{3, 3, 3}}, [](Graph<double>&, auto& v) { return channel_mean(v[0]); }) < 1e-5);
  CHECK(fd_input_check({{1, 4, 5}}, [](Graph<double>&, auto& v) { return log_mag_dft2(v[0], 1e-8); }, 17, 0.1, 1.0) <
        1e-5);
}

TEST_CASE("softmax rows sum to one") {
  Graph<double> g;
  Var<double> x = g.constant(random_tensor({5, 7, 9}, 3));
  Var<double> y = softmax_lastdim(x);
  for (int64_t r = 0; r < 35; ++r) {
    double acc = 0;
    for (int64_t i = 0; i < 9; ++i) acc += y.val().data[static_cast<size_t>(r * 9 + i)];
    CHECK(acc == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("stop_grad blocks flow, passes values") {
  Graph<double> g;
  Var<double> x = g.leaf(random_tensor({2, 2, 2}, 5), true);
  Var<double> s = stop_grad(x);
  for (int64_t i = 0; i < 8; ++i) CHECK(s.val().data[static_cast<size_t>(i)] == x.val().data[static_cast<size_t>(i)]);
  g.backward(sum_all(mul(s, s)));
  CHECK(g.grad(x.id) == nullptr);
}

TEST_CASE("conv2d validates shapes") {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>(Shape{3, 4, 4}));
  Var<double> w = g.constant(Tensor<double>(Shape{2, 4, 3, 3}));  // wrong in-channels
  CHECK_THROWS_AS(conv2d(x, w, Var<double>{}, 1, 1), std::invalid_argument);
}

TEST_CASE("pad_reflect mirrors without duplicating the edge") {
  Graph<double> g;
  Tensor<double> t(Shape{1, 1, 3});
  t.data = {1, 2, 3};
  Var<double> p = pad_reflect(g.constant(t), 0, 0, 2, 2);
  const std::vector<double> want = {3, 2, 1, 2, 3, 2, 1};
  for (size_t i = 0; i < want.size(); ++i) CHECK(p.val().data[i] == want[i]);
}

TEST_CASE("bilinear 2x keeps constants constant") {
  Graph<double> g;
  Var<double> x = g.constant(Tensor<double>(Shape{1, 3, 3}, 0.7));
  Var<double> y = upsample_bilinear2x(x);
  CHECK(y.shape() == Shape{1, 6, 6});
  for (double v : y.val().data) CHECK(v == doctest::Approx(0.7));
}

TEST_CASE("dft log-magnitude is shift invariant for circular shifts") {
  const Tensor<double> img = random_tensor({1, 8, 8}, 23, 0.0, 1.0);
  Tensor<double> rolled(img.shape);
  for (int64_t y = 0; y < 8; ++y)
    for (int64_t x = 0; x < 8; ++x) rolled.data[static_cast<size_t>(((y + 2) % 8) * 8 + (x + 3) % 8)] =
        img.data[static_cast<size_t>(y * 8 + x)];
  Graph<double> g;
  Var<double> a = log_mag_dft2(g.constant(img), 1e-8);
  Var<double> b = log_mag_dft2(g.constant(rolled), 1e-8);
  double diff = 0;
  for (int64_t i = 0; i < 64; ++i)
    diff = std::max(diff, std::abs(a.val().data[static_cast<size_t>(i)] - b.val().data[static_cast<size_t>(i)]));
  CHECK(diff < 1e-9);
}

TEST_SUITE_END();
