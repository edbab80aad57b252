#include <doctest.h>

#include "flora/backbone.hpp"
#include "test_support.hpp"

using namespace flora;
using namespace flora::testing;

namespace {

ModelConfig small_cfg(int b = 4, int cp = 4) {
  ModelConfig c;
  c.base_channels = b;
  c.prior_channels = cp;
  return c;
}

}  // namespace

TEST_SUITE_BEGIN("backbone");

TEST_CASE("sar encoder pyramid shapes") {
  Graph<double> g;
  ParamStore<double> store(1);
  ParamCtx<double> P(g, store);

  SUBCASE("B=8 at 256") {
    auto pyr = encode_sar(P, g.constant(random_tensor({2, 256, 256}, 1)), small_cfg(8));
    CHECK(pyr.s1.shape() == Shape{8, 128, 128});
    CHECK(pyr.s2.shape() == Shape{16, 64, 64});
    CHECK(pyr.s3.shape() == Shape{32, 32, 32});
    CHECK(pyr.x_m.shape() == Shape{64, 32, 32});
  }
  SUBCASE("B=4 at 16") {
    auto pyr = encode_sar(P, g.constant(random_tensor({2, 16, 16}, 1)), small_cfg(4));
    CHECK(pyr.s1.shape() == Shape{4, 8, 8});
    CHECK(pyr.s2.shape() == Shape{8, 4, 4});
    CHECK(pyr.s3.shape() == Shape{16, 2, 2});
    CHECK(pyr.x_m.shape() == Shape{32, 2, 2});
  }
  SUBCASE("indivisible input is rejected") {
    CHECK_THROWS_AS(encode_sar(P, g.constant(random_tensor({2, 20, 20}, 1)), small_cfg(4)), std::invalid_argument);
  }
}

TEST_CASE("teacher pyramid shapes and channel check") {
  Graph<double> g;
  ParamStore<double> store(1);
  ParamCtx<double> P(g, store);

  SUBCASE("B=8 at 256, C_p=4") {
    auto pyr = teacher_pyramid(P, g.constant(random_tensor({4, 256, 256}, 2)), small_cfg(8, 4));
    CHECK(pyr.p1.shape() == Shape{8, 128, 128});
    CHECK(pyr.p2.shape() == Shape{16, 64, 64});
    CHECK(pyr.p3.shape() == Shape{32, 32, 32});
    CHECK(pyr.p4.shape() == Shape{64, 16, 16});
  }
  SUBCASE("B=4 at 32, C_p=3") {
    auto pyr = teacher_pyramid(P, g.constant(random_tensor({3, 32, 32}, 2)), small_cfg(4, 3));
    CHECK(pyr.p1.shape() == Shape{4, 16, 16});
    CHECK(pyr.p4.shape() == Shape{32, 2, 2});
  }
  SUBCASE("channel mismatch is rejected") {
    CHECK_THROWS_AS(teacher_pyramid(P, g.constant(random_tensor({3, 32, 32}, 2)), small_cfg(4, 4)),
                    std::invalid_argument);
  }
}

TEST_CASE("prior pyramid matches the teacher shape contract") {
  Graph<double> g;
  ParamStore<double> store(1);
  ParamCtx<double> P(g, store);
  const ModelConfig cfg = small_cfg(4);

  auto prior = prior_pyramid(P, g.constant(random_tensor({2, 32, 32}, 3)), cfg);
  auto teach = teacher_pyramid(P, g.constant(random_tensor({4, 32, 32}, 4)), cfg);
  CHECK(prior.p1.shape() == teach.p1.shape());
  CHECK(prior.p2.shape() == teach.p2.shape());
  CHECK(prior.p3.shape() == teach.p3.shape());
  CHECK(prior.p4.shape() == teach.p4.shape());
  CHECK(prior.p4.shape() == Shape{32, 2, 2});
}

TEST_CASE("forward passes are deterministic for fixed params") {
  ModelConfig cfg = small_cfg(4);
  const Tensor<double> input = random_tensor({2, 16, 16}, 7);
  ParamStore<double> store(11);
  std::vector<double> first;
  for (int run = 0; run < 2; ++run) {
    Graph<double> g;
    ParamCtx<double> P(g, store);
    auto pyr = encode_sar(P, g.constant(input), cfg);
    if (run == 0)
      first = pyr.x_m.val().data;
    else
      CHECK(pyr.x_m.val().data == first);
  }
}

TEST_CASE("encoder parameter gradients match finite differences") {
  ParamStore<double> store(5);
  const Tensor<double> input = random_tensor({2, 16, 16}, 9);
  const ModelConfig cfg = small_cfg(4);
  auto rep = fd_param_check(store, [&](ParamCtx<double>& P) {
    return sum_all(encode_sar(P, P.graph().constant(input), cfg).x_m);
  });
  CAPTURE(rep.worst_name);
  CHECK(rep.worst_rel < 1e-3);
  CHECK(rep.checked > 0);
}

TEST_CASE("teacher and prior parameter gradients match finite differences") {
  ParamStore<double> store(6);
  const Tensor<double> prior_in = random_tensor({4, 16, 16}, 10, 0.0, 1.0);
  const Tensor<double> sar_in = random_tensor({2, 16, 16}, 11, 0.0, 1.0);
  const ModelConfig cfg = small_cfg(4);
  auto rep = fd_param_check(store, [&](ParamCtx<double>& P) {
    Var<double> a = sum_all(teacher_pyramid(P, P.graph().constant(prior_in), cfg).p4);
    Var<double> b = sum_all(prior_pyramid(P, P.graph().constant(sar_in), cfg).p4);
    return add(a, b);
  });
  CAPTURE(rep.worst_name);
  CHECK(rep.worst_rel < 1e-3);
}

TEST_SUITE_END();
