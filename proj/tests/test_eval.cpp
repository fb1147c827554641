#include "doctest.h"

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "fixtures.hpp"

using namespace cmt;
using cmt::testing::tiny_model;

namespace {

// Independent scorer: punctuation-stripped lowercase tokens counted in maps.
std::pair<double, double> reference_em_f1(const std::string& pred, const std::string& gold) {
  auto tokens = [](const std::string& s) {
    std::string clean;
    for (unsigned char c : s) {
      if (std::ispunct(c)) continue;
      clean += static_cast<char>(std::isspace(c) ? ' ' : std::tolower(c));
    }
    std::vector<std::string> out;
    std::istringstream in(clean);
    for (std::string w; in >> w;) out.push_back(w);
    return out;
  };
  const auto p = tokens(pred), g = tokens(gold);
  const double em = p == g ? 1.0 : 0.0;
  if (p.empty() || g.empty()) return {em, em};
  std::map<std::string, int> pc, gc;
  for (const auto& w : p) ++pc[w];
  for (const auto& w : g) ++gc[w];
  int common = 0;
  for (const auto& [w, c] : pc) common += std::min(c, gc[w]);
  if (common == 0) return {em, 0.0};
  const double prec = static_cast<double>(common) / p.size(), rec = static_cast<double>(common) / g.size();
  return {em, 2 * prec * rec / (prec + rec)};
}

std::string read(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("em and f1 on fixed pairs") {
  CHECK(em_f1("Paris", "paris.").em == 1.0);
  CHECK(em_f1("Paris", "paris.").f1 == 1.0);
  CHECK(em_f1("a b c", "b c d").em == 0.0);
  CHECK(em_f1("a b c", "b c d").f1 == doctest::Approx(2.0 / 3.0));
  CHECK(em_f1("", "").em == 1.0);
  CHECK(em_f1("", "").f1 == 1.0);
  CHECK(em_f1("", "x").f1 == 0.0);
  CHECK(em_f1("x", "").em == 0.0);
  CHECK(normalize_answer("  The  Code,  IS 42! ") == "the code is 42");
}

TEST_CASE("em and f1 agree with an independent scorer on random pairs") {
  std::mt19937_64 rng(11);
  const std::vector<std::string> pool{"a", "b", "c", "Code", "code.", "42", "4,2", "x!", "  ", "owl", "?", ""};
  for (int t = 0; t < 1000; ++t) {
    auto make = [&] {
      std::string s;
      const int n = static_cast<int>(rng() % 6);
      for (int i = 0; i < n; ++i) s += pool[rng() % pool.size()] + (rng() % 3 ? " " : "");
      return s;
    };
    const std::string p = make(), g = make();
    const auto got = em_f1(p, g);
    const auto want = reference_em_f1(p, g);
    INFO("'" << p << "' vs '" << g << "'");
    CHECK(got.em == want.first);
    CHECK(got.f1 == doctest::Approx(want.second).epsilon(1e-12));
    CHECK(got.em <= got.f1);
  }
}

TEST_CASE("qa evaluation reports one row per question and rejects empty sets") {
  const Tokenizer tok;
  auto m = tiny_model(tok, 1);
  const auto qa = gen_synthetic(2, 5, 1);
  const auto bank = online_adapt(documents_of(qa), m, tok);
  InferenceOptions o;
  o.window = 3;
  o.max_new = 3;
  const auto rep = eval_qa(bank, m, tok, qa, o);
  CHECK(rep.n == 5);
  CHECK(rep.rows.size() == 5);
  double em = 0;
  for (const auto& r : rep.rows) {
    CHECK(r.em <= r.f1);
    em += r.em;
  }
  CHECK(rep.em == doctest::Approx(em / 5));
  CHECK_THROWS_AS(eval_qa(bank, m, tok, {}, o), InvalidArgument);
  CHECK_THROWS_AS(eval_qa(bank, m, tok, gen_irrelevant(1, 2), o), InvalidArgument);
  CHECK(eval_no_memory(m, tok, qa, 3).n == 5);
  CHECK(eval_gold_context(m, tok, qa, 3).n == 5);
}

TEST_CASE("retention curve shape and argument checks") {
  const Tokenizer tok;
  auto m = tiny_model(tok, 2);
  const auto stream = gen_synthetic(3, 16, 1);
  InferenceOptions o;
  o.window = 4;
  o.max_new = 3;
  const auto curve = retention_curve(stream, 4, {4, 8, 16}, m, tok, o);
  REQUIRE(curve.size() == 3);
  CHECK(curve[0].docs_adapted == 4);
  CHECK(curve[0].ratio == 1.0);
  CHECK(curve[0].decline == 0.0);
  CHECK(curve[2].docs_adapted == 16);
  for (const auto& p : curve) CHECK(p.decline == doctest::Approx(1.0 - p.ratio));
  CHECK_THROWS_AS(retention_curve(stream, 4, {8, 4}, m, tok, o), InvalidArgument);
  CHECK_THROWS_AS(retention_curve(stream, 4, {8, 8}, m, tok, o), InvalidArgument);
  CHECK_THROWS_AS(retention_curve(stream, 9, {8, 16}, m, tok, o), InvalidArgument);
  CHECK_THROWS_AS(retention_curve(stream, 4, {8, 17}, m, tok, o), InvalidArgument);
  CHECK_THROWS_AS(retention_curve(stream, 0, {8}, m, tok, o), InvalidArgument);
}

TEST_CASE("robustness sweep is sorted, anchored at 1 and rejects ratio 1") {
  const Tokenizer tok;
  auto m = tiny_model(tok, 3);
  const auto qa = gen_synthetic(4, 8, 1);
  InferenceOptions o;
  o.window = 4;
  o.max_new = 3;
  const auto sweep = robustness_sweep(qa, {0.5, 0.2}, m, tok, o, 9);
  REQUIRE(sweep.size() == 3);
  CHECK(sweep[0].ratio == 0.0);
  CHECK(sweep[0].relative_f1 == 1.0);
  CHECK(sweep[0].distractors == 0);
  CHECK(sweep[1].ratio == 0.2);
  CHECK(sweep[1].distractors == 2);
  CHECK(sweep[2].ratio == 0.5);
  CHECK(sweep[2].distractors == 8);
  CHECK_THROWS_AS(robustness_sweep(qa, {1.0}, m, tok, o, 9), InvalidArgument);
  CHECK_THROWS_AS(robustness_sweep(qa, {-0.2}, m, tok, o, 9), InvalidArgument);
}

TEST_CASE("experiment CSVs are reproducible") {
  const Tokenizer tok;
  const auto dir = std::filesystem::temp_directory_path();
  const auto qa = gen_synthetic(5, 8, 1);
  InferenceOptions o;
  o.window = 4;
  o.max_new = 3;
  std::string first[3];
  for (int run = 0; run < 2; ++run) {
    auto m = tiny_model(tok, 4);
    const auto bank = online_adapt(documents_of(qa), m, tok);
    const std::string paths[3] = {(dir / "cmt_qa.csv").string(), (dir / "cmt_ret.csv").string(),
                                  (dir / "cmt_rob.csv").string()};
    write_qa_report_csv(paths[0], eval_qa(bank, m, tok, qa, o));
    write_retention_csv(paths[1], retention_curve(qa, 4, {4, 8}, m, tok, o));
    write_robustness_csv(paths[2], robustness_sweep(qa, {0.2, 0.4}, m, tok, o, 3));
    for (int i = 0; i < 3; ++i) {
      const std::string text = read(paths[i]);
      if (run == 0) first[i] = text;
      else CHECK(text == first[i]);
      std::filesystem::remove(paths[i]);
    }
  }
  CHECK(first[0].rfind("doc_id,question,gold,prediction,em,f1\n", 0) == 0);
  CHECK(first[0].find("\nALL,") != std::string::npos);
  CHECK(first[1].rfind("docs_adapted,f1,retention_ratio,decline\n", 0) == 0);
  CHECK(first[2].rfind("ratio,distractors,f1,relative_f1\n", 0) == 0);
}

}  // TEST_SUITE
