#include "doctest.h"

#include <filesystem>
#include <random>
#include <set>

#include "cmt/corpus.hpp"
#include "cmt/error.hpp"
#include "cmt/tokenizer.hpp"

using namespace cmt;

namespace {

std::string error_message(const std::string& text) {
  try {
    parse_corpus(text);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_SUITE("corpus") {

TEST_CASE("tokenizer round trips every vocabulary word and generated text") {
  const Tokenizer tok;
  for (const auto& w : tok.words()) {
    CHECK(tok.decode(tok.encode(w)) == w);
    CHECK(tok.encode(w).size() == 1);
  }
  for (const auto& r : gen_synthetic(3, 40, 2)) {
    for (const auto& s : {r.document, r.question, r.answer}) CHECK(tok.decode(tok.encode(s)) == s);
  }
  for (const auto& r : gen_irrelevant(3, 20)) CHECK(tok.decode(tok.encode(r.document)) == r.document);
  CHECK(tok.encode("the code for") == std::vector<int>{tok.word_id("the"), tok.word_id("code"), tok.word_id("for")});
  CHECK(tok.encode("4821").size() == 4);
}

TEST_CASE("tokenizer round trips arbitrary strings through the byte fallback") {
  const Tokenizer tok;
  std::mt19937_64 rng(7);
  const auto& words = tok.words();
  for (int t = 0; t < 1000; ++t) {
    std::string s;
    const int parts = 1 + static_cast<int>(rng() % 8);
    for (int p = 0; p < parts; ++p) {
      switch (rng() % 4) {
        case 0: s += words[rng() % words.size()]; break;
        case 1: s += std::to_string(rng() % 100000); break;
        case 2: s += static_cast<char>(rng() % 256); break;
        default: s += std::string(1 + rng() % 3, ' '); break;
      }
    }
    INFO("case " << t);
    CHECK(tok.decode(tok.encode(s)) == s);
  }
  CHECK(tok.decode(tok.encode("")).empty());
  CHECK(tok.decode({Tokenizer::kBos, tok.word_id("code"), Tokenizer::kSep, Tokenizer::kEos}) == "code");
}

TEST_CASE("corpus loader keeps order and validates lines") {
  const std::string three =
      "{\"doc_id\":5,\"document\":\"a\",\"question\":\"q\",\"answer\":\"x\",\"split\":\"train\"}\n"
      "{\"doc_id\":2,\"document\":\"b\",\"question\":\"q\",\"answer\":\"y\",\"split\":\"valid\"}\n"
      "{\"doc_id\":9,\"document\":\"c\",\"split\":\"test\"}\n";
  const auto rs = parse_corpus(three);
  REQUIRE(rs.size() == 3);
  CHECK(rs[0].doc_id == 5);
  CHECK(rs[1].split == Split::Valid);
  CHECK(rs[1].answer == "y");
  CHECK(rs[2].doc_id == 9);
  CHECK_FALSE(rs[2].relevant);
  CHECK(parse_corpus(serialize_corpus(rs)) == rs);
  CHECK(parse_corpus("").empty());

  const std::string missing =
      "{\"doc_id\":1,\"document\":\"a\",\"question\":\"q\",\"answer\":\"x\",\"split\":\"train\"}\n"
      "{\"doc_id\":2,\"document\":\"b\",\"question\":\"q\",\"split\":\"train\"}\n";
  CHECK(error_message(missing).find("line 2") != std::string::npos);
  CHECK(error_message(missing).find("answer") != std::string::npos);
  CHECK(error_message("not json\n").find("line 1") != std::string::npos);
  CHECK(error_message("{\"doc_id\":1,\"document\":\"a\",\"split\":\"dev\"}\n").find("split") != std::string::npos);
  CHECK(error_message("{\"doc_id\":-1,\"document\":\"a\",\"split\":\"test\"}\n").find("doc_id") != std::string::npos);
  CHECK(error_message("{\"doc_id\":1,\"document\":\"a\",\"question\":\"q\",\"answer\":\"\",\"split\":\"test\"}\n")
            .find("non-empty") != std::string::npos);
}

TEST_CASE("corpus files round trip, empty files are valid") {
  const auto dir = std::filesystem::temp_directory_path();
  const auto path = (dir / "cmt_corpus_roundtrip.jsonl").string();
  const auto rs = gen_synthetic(1, SplitCounts{3, 2, 4}, 1);
  save_corpus(rs, path);
  CHECK(load_corpus(path) == rs);
  save_corpus({}, path);
  CHECK(load_corpus(path).empty());
  std::filesystem::remove(path);
  CHECK_THROWS_AS(load_corpus((dir / "cmt_missing_corpus.jsonl").string()), FormatError);
}

TEST_CASE("synthetic generation is deterministic with unique entities") {
  CHECK(gen_synthetic(11, 10, 1) == gen_synthetic(11, 10, 1));
  CHECK_FALSE(gen_synthetic(11, 10, 1) == gen_synthetic(12, 10, 1));
  const auto rs = gen_synthetic(11, 10, 1);
  REQUIRE(rs.size() == 10);
  std::set<std::string> entities;
  std::set<std::uint64_t> ids;
  for (const auto& r : rs) {
    CHECK(r.relevant);
    CHECK(r.answer.size() == 4);
    CHECK(r.document.find(r.answer) != std::string::npos);
    CHECK(r.question.find(entity_of(r.document)) != std::string::npos);
    entities.insert(entity_of(r.document));
    ids.insert(r.doc_id);
  }
  CHECK(entities.size() == 10);
  CHECK(ids.size() == 10);

  const auto multi = gen_synthetic(4, 5, 3);
  CHECK(multi.size() == 15);
  CHECK(documents_of(multi).size() == 5);

  const auto split = gen_synthetic(4, SplitCounts{2, 1, 3}, 1, 100);
  CHECK(split.front().doc_id == 100);
  CHECK(split[0].split == Split::Train);
  CHECK(split[2].split == Split::Valid);
  CHECK(split[5].split == Split::Test);
  CHECK_THROWS_AS(gen_synthetic(1, 0, 1), InvalidArgument);
}

TEST_CASE("distractors use a disjoint entity namespace") {
  CHECK(gen_irrelevant(5, 30) == gen_irrelevant(5, 30));
  std::set<std::string> relevant_words, irrelevant_entities;
  for (const auto& r : gen_synthetic(5, 200, 1)) relevant_words.insert(entity_of(r.document));
  for (const auto& r : gen_irrelevant(5, 200)) {
    CHECK_FALSE(r.relevant);
    CHECK(r.question.empty());
    CHECK(r.answer.empty());
    CHECK(r.doc_id >= 1'000'000);
    irrelevant_entities.insert(entity_of(r.document));
  }
  for (const auto& e : irrelevant_entities) CHECK(relevant_words.count(e) == 0);
}

TEST_CASE("distractor counts follow the mixing ratio") {
  CHECK(distractor_count(0.5, 100) == 100);
  CHECK(distractor_count(0.0, 100) == 0);
  CHECK(distractor_count(0.2, 64) == 16);
  CHECK(distractor_count(0.8, 64) == 256);
  CHECK_THROWS_AS(distractor_count(1.0, 10), InvalidArgument);
  CHECK_THROWS_AS(distractor_count(-0.1, 10), InvalidArgument);
}

TEST_CASE("pretraining samples are deterministic per index") {
  const auto a = draw_pretrain_sample(9, 17), b = draw_pretrain_sample(9, 17);
  CHECK(a.document == b.document);
  CHECK(a.question == b.question);
  CHECK(a.answer == b.answer);
  bool differs = false;
  for (std::uint64_t i = 0; i < 20; ++i) differs = differs || draw_pretrain_sample(9, i).document != a.document;
  CHECK(differs);
}

}  // TEST_SUITE
