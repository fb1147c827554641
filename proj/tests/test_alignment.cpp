#include "doctest.h"

#include <random>

#include "cmt/alignment.hpp"
#include "cmt/error.hpp"
#include "gradcheck.hpp"

using namespace cmt;

namespace {

ModelConfig align_config() {
  ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_layers = 2;
  c.soft_tokens = 8;
  c.prefix_len = 8;
  return c;
}

Tensor<float> random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  Tensor<float> t({r, c});
  for (auto& x : t.vec()) x = n(rng);
  return t;
}

void randomize(Parameter& p, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 0.5f);
  for (auto& x : p.value.vec()) x = n(rng);
}

}  // namespace

TEST_SUITE("alignment") {

TEST_CASE("prefix has one key and one value block of p x d per LM layer") {
  AlignParams al(align_config());
  std::mt19937_64 rng(1);
  al.init(rng);
  const auto prefix = align_tensors(al, random_matrix(8, 32, rng));
  REQUIRE(prefix.keys.size() == 2);
  REQUIRE(prefix.values.size() == 2);
  for (std::size_t l = 0; l < 2; ++l) {
    CHECK(prefix.keys[l].shape() == Shape{8, 32});  // 8 slots x 4 heads x 8 dims
    CHECK(prefix.values[l].shape() == Shape{8, 32});
  }
  CHECK_NOTHROW(prefix.validate(align_config()));
}

TEST_CASE("wrong input shape is rejected") {
  AlignParams al(align_config());
  std::mt19937_64 rng(1);
  al.init(rng);
  CHECK_THROWS_AS(align_tensors(al, random_matrix(7, 32, rng)), ShapeError);
  CHECK_THROWS_AS(align_tensors(al, random_matrix(8, 16, rng)), ShapeError);
}

TEST_CASE("zero memory yields the head bias pattern on every slot") {
  AlignParams al(align_config());
  std::mt19937_64 rng(2);
  al.init(rng);
  for (auto* heads : {&al.key_heads, &al.value_heads})
    for (auto& h : *heads) {
      randomize(h.b1, rng);
      randomize(h.b2, rng);
    }
  const Tensor<float> zero({8, 32});
  const auto a = align_tensors(al, zero);
  CHECK(a.keys == align_tensors(al, zero).keys);
  CHECK(a.values == align_tensors(al, zero).values);
  auto bias_pattern = [](const AlignHead& h) {
    std::vector<double> out(h.b2.value.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
      double s = h.b2.value[j];
      for (std::size_t i = 0; i < h.b1.value.size(); ++i) {
        const double b = h.b1.value[i];
        s += b / (1.0 + std::exp(-b)) * h.w2.value.at(i, j);
      }
      out[j] = s;
    }
    return out;
  };
  for (std::size_t l = 0; l < 2; ++l) {
    const auto kb = bias_pattern(al.key_heads[l]), vb = bias_pattern(al.value_heads[l]);
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t j = 0; j < 32; ++j) {
        CHECK(a.keys[l].at(r, j) == doctest::Approx(kb[j]).epsilon(1e-5));
        CHECK(a.values[l].at(r, j) == doctest::Approx(vb[j]).epsilon(1e-5));
      }
  }
}

TEST_CASE("every input entry reaches the prefix") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    AlignParams al(align_config());
    std::mt19937_64 rng(seed);
    al.init(rng);
    const auto m = random_matrix(8, 32, rng);
    auto bumped = m;
    bumped[rng() % bumped.size()] += 1e-2f;
    const auto a = align_tensors(al, m), b = align_tensors(al, bumped);
    bool changed = false;
    for (std::size_t l = 0; l < 2; ++l) changed = changed || a.keys[l] != b.keys[l] || a.values[l] != b.values[l];
    CHECK(changed);
  }
}

TEST_CASE("rows are replicated cyclically when the prefix is longer than k") {
  CHECK(replication_rows(3, 8) == std::vector<std::size_t>{0, 1, 2, 0, 1, 2, 0, 1});
  CHECK(replication_rows(8, 4) == std::vector<std::size_t>{0, 1, 2, 3});
  ModelConfig c = align_config();
  c.soft_tokens = 3;
  c.prefix_len = 8;
  AlignParams al(c);
  std::mt19937_64 rng(3);
  al.init(rng);
  const auto prefix = align_tensors(al, random_matrix(3, 32, rng));
  CHECK(prefix.length() == 8);
  // With unit slot gains, slots r and r + k see the same row.
  for (std::size_t j = 0; j < 32; ++j) {
    CHECK(prefix.keys[0].at(1, j) == prefix.keys[0].at(4, j));
    CHECK(prefix.values[1].at(2, j) == prefix.values[1].at(5, j));
  }
}

TEST_CASE("gradients through alignment match finite differences") {
  ModelConfig c = align_config();
  c.d_model = 16;
  c.n_heads = 2;
  c.soft_tokens = 3;
  c.prefix_len = 5;
  for (std::uint64_t seed : {1, 2, 3, 4, 5}) {
    AlignParams al(c);
    std::mt19937_64 rng(seed);
    al.init(rng);
    for (auto* heads : {&al.key_heads, &al.value_heads})
      for (auto& h : *heads) {
        randomize(h.b1, rng);
        randomize(h.b2, rng);
      }
    Parameter m = cmt::testing::random_param("m", {3, 16}, rng);
    ParamList params = al.params();
    params.push_back(&m);
    auto r = cmt::testing::grad_check(params, [&](auto& g) {
      auto pv = align(g, al, g.param(m));
      auto loss = cmt::testing::project(g, pv.keys[0], seed);
      for (std::size_t l = 0; l < pv.keys.size(); ++l) {
        if (l > 0) loss = ad::add(loss, cmt::testing::project(g, pv.keys[l], seed + 10 * l));
        loss = ad::add(loss, cmt::testing::project(g, pv.values[l], seed + 10 * l + 5));
      }
      return loss;
    }, seed, 6, 3);
    INFO("seed " << seed << " worst " << r.worst);
    CHECK(r.max_rel < 1e-3);
    CHECK(r.nonzero > 0);
  }
}

}  // TEST_SUITE
