#include "doctest.h"

#include <algorithm>
#include <filesystem>
#include <numeric>
#include <random>

#include "cmt/error.hpp"
#include "cmt/memory_bank.hpp"

using namespace cmt;

namespace {

CondensedMemory random_memory(std::uint64_t id, std::size_t k, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> n(0.0f, 1.0f);
  CondensedMemory m;
  m.doc_id = id;
  m.matrix = Tensor<float>({k, d});
  for (auto& x : m.matrix.vec()) x = n(rng);
  m.pooled = pool_rows(m.matrix);
  return m;
}

// A memory whose pooled vector is exactly `pooled` (all rows equal).
CondensedMemory memory_with_pooled(std::uint64_t id, const std::vector<float>& pooled, std::size_t k = 2) {
  CondensedMemory m;
  m.doc_id = id;
  m.matrix = Tensor<float>({k, pooled.size()});
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < pooled.size(); ++j) m.matrix.at(i, j) = pooled[j];
  m.pooled = Tensor<float>({1, pooled.size()}, pooled);
  return m;
}

// Full stable sort by descending similarity.
std::vector<std::size_t> brute_force(const MemoryBank& bank, const std::vector<float>& q, std::size_t window) {
  std::vector<double> sim;
  for (const auto& e : bank) sim.push_back(cosine_similarity(q, e.pooled.span()));
  std::vector<std::size_t> idx(bank.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return sim[a] > sim[b]; });
  idx.resize(std::min(window, idx.size()));
  return idx;
}

}  // namespace

TEST_SUITE("memory_bank") {

TEST_CASE("insert keeps order and rejects duplicates and shape mismatches") {
  std::mt19937_64 rng(1);
  MemoryBank bank(4, 8);
  bank.insert(random_memory(10, 4, 8, rng));
  CHECK(bank.size() == 1);
  for (std::uint64_t i = 0; i < 99; ++i) bank.insert(random_memory(1000 - i, 4, 8, rng));
  REQUIRE(bank.size() == 100);
  CHECK(bank[0].doc_id == 10);
  for (std::size_t i = 1; i < 100; ++i) CHECK(bank[i].doc_id == 1000 - (i - 1));
  CHECK_THROWS_AS(bank.insert(random_memory(10, 4, 8, rng)), InvalidArgument);
  CHECK_THROWS_AS(bank.insert(random_memory(5000, 3, 8, rng)), ShapeError);
  CHECK_THROWS_AS(bank.insert(random_memory(5001, 4, 7, rng)), ShapeError);
  CHECK(bank.size() == 100);
}

TEST_CASE("top-k selection on fixed similarities") {
  const std::vector<float> q{1.0f, 0.0f};
  MemoryBank bank(2, 2);
  // Cosines to q of 0.9, 0.1 and 0.5.
  for (auto [id, c] : std::vector<std::pair<int, float>>{{0, 0.9f}, {1, 0.1f}, {2, 0.5f}})
    bank.insert(memory_with_pooled(id, {c, std::sqrt(1.0f - c * c)}));
  CHECK(bank.topk_select(q, 2) == std::vector<std::size_t>{0, 2});
  CHECK(bank.topk_select(q, 3) == std::vector<std::size_t>{0, 2, 1});
  CHECK(bank.topk_select(q, 50) == std::vector<std::size_t>{0, 2, 1});
  CHECK_THROWS_AS(bank.topk_select(q, 0), InvalidArgument);
  CHECK_THROWS_AS(MemoryBank(2, 2).topk_select(q, 1), InvalidArgument);
}

TEST_CASE("exact ties resolve to the earlier entry") {
  std::mt19937_64 rng(2);
  MemoryBank bank(2, 3);
  for (std::uint64_t i = 0; i < 10; ++i) {
    if (i == 3 || i == 7)
      bank.insert(memory_with_pooled(i, {0.0f, 0.0f, 5.0f}));
    else
      bank.insert(memory_with_pooled(i, {1.0f, static_cast<float>(i), -1.0f}));
  }
  const auto sel = bank.topk_select(std::vector<float>{0.0f, 0.0f, 1.0f}, 2);
  CHECK(sel == std::vector<std::size_t>{3, 7});
}

TEST_CASE("top-k selection matches a full-sort oracle on random banks") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t size = 1 + rng() % 64;
    MemoryBank bank(3, 6);
    for (std::size_t i = 0; i < size; ++i) {
      // Every fifth entry duplicates an earlier one to exercise ties.
      if (i >= 5 && i % 5 == 0) {
        auto dup = bank[i - 5];
        dup.doc_id = 100000 + i;
        bank.insert(dup);
      } else {
        bank.insert(random_memory(i, 3, 6, rng));
      }
    }
    const auto q = random_memory(0, 3, 6, rng).pooled.vec();
    for (std::size_t w = 1; w <= size + 2; ++w) {
      INFO("seed " << seed << " window " << w);
      CHECK(bank.topk_select(q, w) == brute_force(bank, q, w));
    }
  }
}

TEST_CASE("selection never mutates stored memories") {
  std::mt19937_64 rng(3);
  MemoryBank bank(4, 8);
  for (std::uint64_t i = 0; i < 20; ++i) bank.insert(random_memory(i, 4, 8, rng));
  const std::string before = bank.serialize();
  for (int t = 0; t < 10; ++t) bank.topk_select(random_memory(0, 4, 8, rng).pooled.vec(), 5);
  CHECK(bank.serialize() == before);
}

TEST_CASE("serialization round trips byte-for-byte") {
  std::mt19937_64 rng(4);
  MemoryBank bank(4, 8);
  for (std::uint64_t i : {42, 7, 19}) bank.insert(random_memory(i, 4, 8, rng));
  const std::string bytes = bank.serialize();
  CHECK(bytes.size() == 4 + 2 + 4 + 4 + 8 + 3 * (8 + (32 + 8) * 4));
  CHECK(bytes.substr(0, 4) == "CMTB");
  const auto loaded = MemoryBank::deserialize(bytes);
  CHECK(loaded == bank);
  CHECK(loaded.serialize() == bytes);

  const auto path = std::filesystem::temp_directory_path() / "cmt_bank_roundtrip.cmtb";
  bank.save(path.string());
  CHECK(MemoryBank::load(path.string()).serialize() == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("an empty bank loads as a valid empty bank") {
  const auto loaded = MemoryBank::deserialize(MemoryBank(8, 32).serialize());
  CHECK(loaded.empty());
  CHECK(loaded.k() == 8);
  CHECK(loaded.d() == 32);
}

TEST_CASE("corrupt bank files raise structured errors") {
  std::mt19937_64 rng(5);
  MemoryBank bank(2, 4);
  for (std::uint64_t i = 0; i < 3; ++i) bank.insert(random_memory(i, 2, 4, rng));
  const std::string bytes = bank.serialize();
  auto kind_of = [](const std::string& b) {
    try {
      MemoryBank::deserialize(b);
    } catch (const Error& e) {
      return e.kind();
    }
    return std::string("none");
  };
  CHECK(kind_of(bytes.substr(0, bytes.size() - 5)) == "truncated");
  CHECK(kind_of(bytes.substr(0, 9)) == "truncated");
  std::string bad = bytes;
  bad[0] = 'X';
  CHECK(kind_of(bad) == "magic");
  bad = bytes;
  bad[4] = 9;
  CHECK(kind_of(bad) == "version");
  CHECK(kind_of(bytes + "xx") == "trailing");
  CHECK_THROWS_AS(MemoryBank::load("/nonexistent/dir/bank.cmtb"), FormatError);
}

TEST_CASE("cosine similarity uses a norm floor") {
  const std::vector<float> z{0.0f, 0.0f}, a{1.0f, 0.0f};
  CHECK(cosine_similarity(z, a) == 0.0);
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  CHECK_THROWS_AS(cosine_similarity(a, std::vector<float>{1.0f}), ShapeError);
}

}  // TEST_SUITE
