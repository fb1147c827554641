#include "cmt/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include "cmt/error.hpp"
#include "json.hpp"

namespace cmt {
namespace {

using json = nlohmann::json;

const std::vector<std::string> kRelevantFirst = {"red",  "blue", "green", "gold", "gray", "pink", "dark", "pale",
                                                 "wild", "calm", "bold",  "cold", "warm", "soft", "tall", "deep",
                                                 "fast", "slow", "old",   "new",  "high", "low",  "wet",  "dry"};
const std::vector<std::string> kRelevantSecond = {"fox",  "owl",  "bear", "wolf", "hawk", "deer", "lynx", "crow",
                                                  "swan", "frog", "mole", "seal", "crab", "moth", "wasp", "yak",
                                                  "toad", "hare", "lark", "newt", "orca", "puma", "ram",  "vole"};
const std::vector<std::string> kDistractorFirst = {"north", "south",  "east",   "west",   "upper",
                                                   "lower", "inner",  "outer",  "first",  "last",
                                                   "middle", "grand", "little", "great",  "royal",
                                                   "silent", "hidden", "broken", "golden", "silver"};
const std::vector<std::string> kDistractorSecond = {"river",  "hill",   "lake",   "road",   "bridge",
                                                    "tower",  "field",  "forest", "harbor", "valley",
                                                    "castle", "garden", "market", "island", "canyon",
                                                    "meadow", "temple", "station", "square", "village"};
const std::vector<std::string> kTemplateWords = {"the", "code", "for", "is", ".", "what", "?", "room", "of"};

std::string code4(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> digit(0, 9);
  std::string s;
  for (int i = 0; i < 4; ++i) s += static_cast<char>('0' + digit(rng));
  return s;
}

std::string fact_sentence(const std::string& entity, const std::string& code) {
  return "the code for " + entity + " is " + code + " .";
}
std::string fact_question(const std::string& entity) { return "what is the code for " + entity + " ?"; }
std::string distractor_sentence(const std::string& entity, const std::string& code) {
  return "the room of " + entity + " is " + code + " .";
}

// Draws `n` distinct two-word entities from the product of two pools.
std::vector<std::string> draw_entities(std::mt19937_64& rng, int n, const std::vector<std::string>& first,
                                       const std::vector<std::string>& second) {
  const std::size_t space = first.size() * second.size();
  if (n < 0 || static_cast<std::size_t>(n) > space)
    throw InvalidArgument("requested " + std::to_string(n) + " distinct entities, namespace holds " +
                          std::to_string(space));
  std::vector<std::size_t> idx(space);
  for (std::size_t i = 0; i < space; ++i) idx[i] = i;
  // Partial Fisher-Yates with an explicit draw so results do not depend on
  // std::shuffle's implementation.
  for (int i = 0; i < n; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), space - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  std::vector<std::string> out;
  for (int i = 0; i < n; ++i) out.push_back(first[idx[i] / second.size()] + " " + second[idx[i] % second.size()]);
  return out;
}

std::string random_entity(std::mt19937_64& rng, const std::vector<std::string>& first,
                          const std::vector<std::string>& second) {
  std::uniform_int_distribution<std::size_t> a(0, first.size() - 1), b(0, second.size() - 1);
  return first[a(rng)] + " " + second[b(rng)];
}

const char* required_string(const json& obj, const char* key, int lineno, bool required) {
  if (!obj.contains(key)) {
    if (required) throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": missing field \"" + key + "\"");
    return nullptr;
  }
  if (!obj[key].is_string())
    throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": field \"" + key + "\" must be a string");
  return obj[key].get_ref<const std::string&>().c_str();
}

}  // namespace

std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Valid: return "valid";
    case Split::Test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "valid" || s == "validation") return Split::Valid;
  if (s == "test") return Split::Test;
  throw FormatError("corpus", "unknown split '" + s + "'");
}

std::vector<Document> documents_of(const std::vector<QARecord>& records) {
  std::vector<Document> docs;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& r : records)
    if (seen.insert(r.doc_id).second) docs.push_back({r.doc_id, r.document});
  return docs;
}

std::vector<QARecord> parse_corpus(const std::string& text) {
  std::vector<QARecord> out;
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::parse_error& e) {
      throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": malformed JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": expected an object");
    QARecord r;
    if (!obj.contains("doc_id")) throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": missing field \"doc_id\"");
    if (!obj["doc_id"].is_number_integer() || obj["doc_id"].get<std::int64_t>() < 0)
      throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": field \"doc_id\" must be a non-negative integer");
    r.doc_id = obj["doc_id"].get<std::uint64_t>();
    r.document = required_string(obj, "document", lineno, true);
    r.split = split_from_string(required_string(obj, "split", lineno, true));
    const bool has_q = obj.contains("question");
    const bool has_a = obj.contains("answer");
    // A line is a distractor when it carries neither question nor answer; a
    // QA line must carry both.
    r.relevant = has_q || has_a;
    if (r.relevant) {
      r.question = required_string(obj, "question", lineno, true);
      r.answer = required_string(obj, "answer", lineno, true);
      if (r.answer.empty())
        throw FormatError("corpus", "corpus line " + std::to_string(lineno) + ": field \"answer\" must be non-empty");
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<QARecord> load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("io", "cannot open corpus file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_corpus(ss.str());
}

std::string serialize_corpus(const std::vector<QARecord>& records) {
  std::string out;
  for (const auto& r : records) {
    json obj;
    obj["doc_id"] = r.doc_id;
    obj["document"] = r.document;
    if (r.relevant) {
      obj["question"] = r.question;
      obj["answer"] = r.answer;
    }
    obj["split"] = to_string(r.split);
    out += obj.dump() + "\n";
  }
  return out;
}

void save_corpus(const std::vector<QARecord>& records, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("io", "cannot write corpus file " + path);
  out << serialize_corpus(records);
}

std::vector<std::string> synthetic_vocabulary() {
  std::vector<std::string> words = kTemplateWords;
  for (const auto* pool : {&kRelevantFirst, &kRelevantSecond, &kDistractorFirst, &kDistractorSecond})
    words.insert(words.end(), pool->begin(), pool->end());
  return words;
}

std::vector<QARecord> gen_synthetic(std::uint64_t seed, SplitCounts counts, int facts_per_doc, std::uint64_t first_id) {
  if (counts.total() < 1) throw InvalidArgument("gen_synthetic: n_docs must be >= 1");
  if (facts_per_doc < 1) throw InvalidArgument("gen_synthetic: facts_per_doc must be >= 1");
  std::mt19937_64 rng(seed);
  const auto entities = draw_entities(rng, counts.total() * facts_per_doc, kRelevantFirst, kRelevantSecond);
  std::vector<QARecord> out;
  for (int d = 0; d < counts.total(); ++d) {
    const Split split = d < counts.train ? Split::Train : d < counts.train + counts.valid ? Split::Valid : Split::Test;
    std::vector<std::pair<std::string, std::string>> facts;
    std::string doc;
    for (int f = 0; f < facts_per_doc; ++f) {
      facts.emplace_back(entities[d * facts_per_doc + f], code4(rng));
      if (f) doc += ' ';
      doc += fact_sentence(facts.back().first, facts.back().second);
    }
    for (const auto& [entity, code] : facts) {
      QARecord r;
      r.doc_id = first_id + static_cast<std::uint64_t>(d);
      r.document = doc;
      r.question = fact_question(entity);
      r.answer = code;
      r.split = split;
      out.push_back(std::move(r));
    }
  }
  return out;
}

std::vector<QARecord> gen_synthetic(std::uint64_t seed, int n_docs, int facts_per_doc) {
  return gen_synthetic(seed, SplitCounts{0, 0, n_docs}, facts_per_doc);
}

std::vector<QARecord> gen_irrelevant(std::uint64_t seed, int n, std::uint64_t first_id) {
  if (n < 0) throw InvalidArgument("gen_irrelevant: n must be >= 0");
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  const auto entities = draw_entities(rng, n, kDistractorFirst, kDistractorSecond);
  std::vector<QARecord> out;
  for (int i = 0; i < n; ++i) {
    QARecord r;
    r.doc_id = first_id + static_cast<std::uint64_t>(i);
    r.document = distractor_sentence(entities[i], code4(rng));
    r.split = Split::Test;
    r.relevant = false;
    out.push_back(std::move(r));
  }
  return out;
}

int distractor_count(double ratio, int relevant_docs) {
  if (!(ratio >= 0.0) || ratio >= 1.0) throw InvalidArgument("distractor ratio must lie in [0, 1)");
  // The epsilon absorbs binary rounding of ratios such as 0.8 / 0.2.
  return static_cast<int>(std::ceil(ratio / (1.0 - ratio) * relevant_docs - 1e-9));
}

std::string entity_of(const std::string& text) {
  for (const std::string prefix : {"the code for ", "what is the code for ", "the room of "}) {
    if (text.rfind(prefix, 0) != 0) continue;
    const auto rest = text.substr(prefix.size());
    const auto first = rest.find(' ');
    if (first == std::string::npos) return "";
    const auto second = rest.find(' ', first + 1);
    return rest.substr(0, second);
  }
  return "";
}

PretrainSample draw_pretrain_sample(std::uint64_t seed, std::uint64_t index) {
  std::mt19937_64 rng(seed * 0x100000001b3ULL + index);
  std::uniform_int_distribution<int> family(0, 9);
  std::uniform_int_distribution<int> nfacts(1, 3);
  PretrainSample s;
  const int f = family(rng);
  if (f == 9) {
    s.document = distractor_sentence(random_entity(rng, kDistractorFirst, kDistractorSecond), code4(rng));
    return s;
  }
  const std::string entity = random_entity(rng, kRelevantFirst, kRelevantSecond);
  const std::string code = code4(rng);
  if (f == 8) {
    // No document: the answer is unpredictable, which teaches the prior.
    s.question = fact_question(entity);
    s.answer = code;
    return s;
  }
  const int n = nfacts(rng);
  std::uniform_int_distribution<int> which(0, n - 1);
  const int asked = which(rng);
  for (int i = 0; i < n; ++i) {
    std::string e = entity, c = code;
    if (i != asked) {
      do e = random_entity(rng, kRelevantFirst, kRelevantSecond);
      while (e == entity);
      c = code4(rng);
    }
    if (i) s.document += ' ';
    s.document += fact_sentence(e, c);
  }
  if (f < 7) {
    s.question = fact_question(entity);
    s.answer = code;
  }
  return s;
}

}  // namespace cmt
