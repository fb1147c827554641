#include "doctest.h"

#include <cmath>

#include "cmt/autodiff.hpp"
#include "cmt/error.hpp"
#include "cmt/layers.hpp"
#include "gradcheck.hpp"

using namespace cmt;
using cmt::testing::grad_check;
using cmt::testing::project;
using cmt::testing::random_param;

namespace {

constexpr std::uint64_t kSeeds[] = {1, 2, 3, 4, 5};

template <class G>
using scalar_of = typename std::remove_reference_t<G>::value_type;

template <class Build>
void expect_grads(const char* what, const ParamList& params, Build&& build, std::uint64_t seed) {
  const auto r = grad_check(params, build, seed);
  INFO(what << " seed " << seed << " worst " << r.worst);
  CHECK(r.checked > 0);
  CHECK(r.max_rel < 1e-3);
}

}  // namespace

TEST_SUITE("autodiff") {

TEST_CASE("forward fixtures") {
  ad::Graph<float> g(false);
  auto a = g.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto id = g.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  CHECK(ad::matmul(a, id).value() == a.value());

  auto sm = ad::softmax_rows(g.constant(Tensor<float>({1, 2}, {0, 0})));
  CHECK(sm.value()[0] == doctest::Approx(0.5));
  CHECK(sm.value()[1] == doctest::Approx(0.5));

  auto x = g.constant(Tensor<float>({1, 4}, 2.0f));
  auto ones = g.constant(Tensor<float>({4}, 1.0f));
  auto n = ad::rms_norm_rows(x, ones, 0.0f);
  for (float v : n.value().vec()) CHECK(v == doctest::Approx(1.0));
}

TEST_CASE("x*x at 3 has gradient 6") {
  Parameter x;
  x.name = "x";
  x.value = Tensor<float>::scalar(3.0f);
  x.zero_grad();
  ad::Graph<float> g;
  auto v = g.param(x);
  g.backward(ad::sum(ad::mul(v, v)));
  CHECK(x.grad[0] == doctest::Approx(6.0));
}

TEST_CASE("softmax cross-entropy gradient is probs minus one-hot") {
  std::mt19937_64 rng(11);
  auto logits = random_param("logits", {1, 5}, rng);
  ad::Graph<double> g;
  auto lv = g.param(logits);
  g.backward(ad::cross_entropy(lv, {3}, {1}));
  double z = 0;
  for (float v : logits.value.vec()) z += std::exp(static_cast<double>(v));
  for (std::size_t j = 0; j < 5; ++j) {
    const double p = std::exp(static_cast<double>(logits.value[j])) / z;
    CHECK(logits.grad[j] == doctest::Approx(p - (j == 3 ? 1.0 : 0.0)).epsilon(1e-5));
  }
}

TEST_CASE("matmul gradient wrt A equals grad_C times B transposed") {
  std::mt19937_64 rng(21);
  auto a = random_param("a", {3, 3}, rng);
  auto b = random_param("b", {3, 3}, rng);
  ad::Graph<float> g;
  auto c = ad::matmul(g.param(a), g.param(b));
  g.backward(ad::sum(c));
  // grad_C is all ones, so dA[i][j] = sum_n B[j][n].
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      float row = 0;
      for (std::size_t n = 0; n < 3; ++n) row += b.value.at(j, n);
      CHECK(a.grad.at(i, j) == doctest::Approx(row));
    }
}

TEST_CASE("gradient accumulates across uses and disconnected params get zeros") {
  std::mt19937_64 rng(5);
  auto x = random_param("x", {2, 3}, rng);
  auto unused = random_param("unused", {2}, rng);
  ad::Graph<float> g;
  auto v = g.param(x);
  g.param(unused);
  g.backward(ad::sum(ad::add(v, v)));
  for (float gv : x.grad.vec()) CHECK(gv == doctest::Approx(2.0));
  for (float gv : unused.grad.vec()) CHECK(gv == 0.0f);
}

TEST_CASE("backward rejects non-scalar losses and no-grad graphs") {
  std::mt19937_64 rng(5);
  auto x = random_param("x", {2, 3}, rng);
  ad::Graph<float> g;
  auto v = g.param(x);
  CHECK_THROWS_AS(g.backward(v), ShapeError);
  ad::Graph<float> ng(false);
  auto w = ng.param(x);
  auto loss = ad::sum(ad::mul(w, w));
  CHECK(ng.backward_closures() == 0);
  CHECK_THROWS_AS(ng.backward(loss), Error);
}

TEST_CASE("shape errors name the node and both shapes") {
  ad::Graph<float> g;
  auto a = g.constant(Tensor<float>({2, 3}));
  auto b = g.constant(Tensor<float>({2, 3}));
  try {
    ad::matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2x3]") != std::string::npos);
    CHECK(msg.find("node 2") != std::string::npos);
    CHECK(e.kind() == "shape");
  }
}

TEST_CASE("forward is pure") {
  std::mt19937_64 rng(9);
  auto a = random_param("a", {4, 6}, rng);
  auto gain = random_param("gain", {6}, rng);
  auto run = [&] {
    ad::Graph<float> g(false);
    auto x = ad::rms_norm_rows(g.param(a), g.param(gain), 1e-5f);
    return ad::softmax_rows(ad::matmul_nt(x, x), std::size_t{0}).value();
  };
  CHECK(run() == run());
}

TEST_CASE("detach blocks gradients") {
  std::mt19937_64 rng(3);
  auto x = random_param("x", {2, 2}, rng);
  ad::Graph<float> g;
  auto v = g.param(x);
  g.backward(ad::sum(ad::mul(ad::detach(v), ad::detach(v))));
  for (float gv : x.grad.vec()) CHECK(gv == 0.0f);
}

TEST_CASE("causal softmax masks the future") {
  ad::Graph<float> g(false);
  auto s = ad::softmax_rows(g.constant(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6})), std::size_t{1});
  CHECK(s.value().at(0, 2) == 0.0f);
  CHECK(s.value().at(1, 2) > 0.0f);
  CHECK(s.value().at(0, 0) + s.value().at(0, 1) == doctest::Approx(1.0));
}

TEST_CASE("cosine rejects zero vectors and cross-entropy an empty mask") {
  ad::Graph<float> g(false);
  auto z = g.constant(Tensor<float>({1, 3}));
  auto o = g.constant(Tensor<float>({1, 3}, 1.0f));
  CHECK_THROWS_AS(ad::cosine(z, o), InvalidArgument);
  CHECK_THROWS_AS(ad::cross_entropy(o, {0}, {0}), InvalidArgument);
}

TEST_CASE("primitive gradients match finite differences") {
  for (std::uint64_t seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto a = random_param("a", {3, 4}, rng);
    auto b = random_param("b", {4, 5}, rng);
    auto c = random_param("c", {3, 4}, rng);
    auto d = random_param("d", {5, 4}, rng);
    auto bias = random_param("bias", {4}, rng);
    auto pos = random_param("pos", {3, 4}, rng, 0.3, 2.0);
    auto table = random_param("table", {7, 4}, rng);
    auto gain = random_param("gain", {4}, rng, 0.2, 1.0);
    auto logits = random_param("logits", {4, 6}, rng, 2.0);

    expect_grads("matmul", {&a, &b}, [&](auto& g) { return project(g, ad::matmul(g.param(a), g.param(b)), seed); },
                 seed);
    expect_grads("matmul_nt", {&a, &d},
                 [&](auto& g) { return project(g, ad::matmul_nt(g.param(a), g.param(d)), seed); }, seed);
    expect_grads("transpose", {&a}, [&](auto& g) { return project(g, ad::transpose(g.param(a)), seed); }, seed);
    expect_grads("add", {&a, &c}, [&](auto& g) { return project(g, ad::add(g.param(a), g.param(c)), seed); }, seed);
    expect_grads("sub", {&a, &c}, [&](auto& g) { return project(g, ad::sub(g.param(a), g.param(c)), seed); }, seed);
    expect_grads("mul", {&a, &c}, [&](auto& g) { return project(g, ad::mul(g.param(a), g.param(c)), seed); }, seed);
    expect_grads("add_bias", {&a, &bias},
                 [&](auto& g) { return project(g, ad::add_bias(g.param(a), g.param(bias)), seed); }, seed);
    expect_grads("scale", {&a}, [&](auto& g) {
      using T = scalar_of<decltype(g)>;
      return project(g, ad::scale(g.param(a), T(-1.7)), seed);
    }, seed);
    expect_grads("add_scalar", {&a}, [&](auto& g) {
      using T = scalar_of<decltype(g)>;
      return project(g, ad::add_scalar(g.param(a), T(0.3)), seed);
    }, seed);
    expect_grads("exp", {&a}, [&](auto& g) { return project(g, ad::exp(g.param(a)), seed); }, seed);
    expect_grads("log", {&pos}, [&](auto& g) { return project(g, ad::log(g.param(pos)), seed); }, seed);
    expect_grads("silu", {&a}, [&](auto& g) { return project(g, ad::silu(g.param(a)), seed); }, seed);
    expect_grads("sum", {&a}, [&](auto& g) { return ad::sum(ad::mul(g.param(a), g.param(a))); }, seed);
    expect_grads("mean", {&a}, [&](auto& g) { return ad::mean(ad::mul(g.param(a), g.param(a))); }, seed);
    expect_grads("mean_rows", {&a}, [&](auto& g) { return project(g, ad::mean_rows(g.param(a)), seed); }, seed);
    expect_grads("slice_rows", {&a}, [&](auto& g) { return project(g, ad::slice_rows(g.param(a), 1, 3), seed); },
                 seed);
    expect_grads("slice_cols", {&a}, [&](auto& g) { return project(g, ad::slice_cols(g.param(a), 1, 3), seed); },
                 seed);
    expect_grads("concat_rows", {&a, &c},
                 [&](auto& g) { return project(g, ad::concat_rows<scalar_of<decltype(g)>>({g.param(a), g.param(c)}), seed); },
                 seed);
    expect_grads("concat_cols", {&a, &c},
                 [&](auto& g) { return project(g, ad::concat_cols<scalar_of<decltype(g)>>({g.param(a), g.param(c)}), seed); },
                 seed);
    expect_grads("tile_rows", {&a}, [&](auto& g) { return project(g, ad::tile_rows(g.param(a), 7), seed); }, seed);
    expect_grads("embedding", {&table},
                 [&](auto& g) { return project(g, ad::embedding(g.param(table), {3, 0, 3, 6}), seed); }, seed);
    expect_grads("softmax_rows", {&a}, [&](auto& g) { return project(g, ad::softmax_rows(g.param(a)), seed); }, seed);
    expect_grads("causal softmax_rows", {&a},
                 [&](auto& g) { return project(g, ad::softmax_rows(g.param(a), std::size_t{1}), seed); }, seed);
    expect_grads("rms_norm_rows", {&a, &gain}, [&](auto& g) {
      using T = scalar_of<decltype(g)>;
      return project(g, ad::rms_norm_rows(g.param(a), g.param(gain), T(1e-5)), seed);
    }, seed);
    expect_grads("rope", {&a},
                 [&](auto& g) { return project(g, ad::rope(g.param(a), {0, 5, 17}, 2), seed); }, seed);
    expect_grads("cross_entropy", {&logits},
                 [&](auto& g) { return ad::cross_entropy(g.param(logits), {1, 5, 0, 2}, {1, 0, 1, 1}); }, seed);
    expect_grads("cosine", {&a, &c}, [&](auto& g) { return ad::cosine(g.param(a), g.param(c)); }, seed);
  }
}

TEST_CASE("multi-head attention gradients match finite differences") {
  for (std::uint64_t seed : kSeeds) {
    std::mt19937_64 rng(seed);
    auto q = random_param("q", {3, 8}, rng);
    auto k = random_param("k", {5, 8}, rng);
    auto v = random_param("v", {5, 8}, rng);
    expect_grads("attention", {&q, &k, &v}, [&](auto& g) {
      return project(g, multi_head_attention(g.param(q), g.param(k), g.param(v), 2, std::size_t{2}), seed);
    }, seed);
  }
}

}  // TEST_SUITE
