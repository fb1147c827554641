#include "cmt/eval.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include "cmt/error.hpp"

namespace cmt {

namespace {

std::vector<std::string> split_ws(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string w;
  while (in >> w) out.push_back(w);
  return out;
}

QAReport finish(std::vector<QAPrediction> rows) {
  if (rows.empty()) throw InvalidArgument("evaluation: no questions to score");
  QAReport rep;
  rep.n = rows.size();
  for (const auto& r : rows) {
    rep.em += r.em;
    rep.f1 += r.f1;
  }
  rep.em /= static_cast<double>(rep.n);
  rep.f1 /= static_cast<double>(rep.n);
  rep.rows = std::move(rows);
  return rep;
}

template <class Answerer>
QAReport score_all(const std::vector<QARecord>& qa, Answerer&& predict) {
  std::vector<QAPrediction> rows;
  for (const auto& r : qa) {
    if (r.question.empty()) continue;
    QAPrediction p;
    p.doc_id = r.doc_id;
    p.question = r.question;
    p.gold = r.answer;
    p.prediction = predict(r);
    const EmF1 s = em_f1(p.prediction, p.gold);
    p.em = s.em;
    p.f1 = s.f1;
    rows.push_back(std::move(p));
  }
  return finish(std::move(rows));
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("io", "cannot write " + path);
  out << std::setprecision(10);
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

}  // namespace

std::string normalize_answer(const std::string& s) {
  std::string out;
  bool pending_space = false;
  for (unsigned char c : s) {
    if (std::ispunct(c)) continue;
    if (std::isspace(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(c));
  }
  return out;
}

EmF1 em_f1(const std::string& prediction, const std::string& gold) {
  const std::string p = normalize_answer(prediction);
  const std::string g = normalize_answer(gold);
  EmF1 out;
  out.em = p == g ? 1.0 : 0.0;
  const auto pt = split_ws(p);
  const auto gt = split_ws(g);
  if (pt.empty() || gt.empty()) {
    out.f1 = pt.empty() && gt.empty() ? 1.0 : 0.0;
    return out;
  }
  std::map<std::string, int> counts;
  for (const auto& t : gt) ++counts[t];
  int common = 0;
  for (const auto& t : pt) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return out;
  const double precision = static_cast<double>(common) / static_cast<double>(pt.size());
  const double recall = static_cast<double>(common) / static_cast<double>(gt.size());
  out.f1 = 2 * precision * recall / (precision + recall);
  return out;
}

QAReport eval_qa(const MemoryBank& bank, CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa,
                 const InferenceOptions& opts) {
  return score_all(qa, [&](const QARecord& r) { return answer(r.question, bank, model, tok, opts).text; });
}

QAReport eval_no_memory(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa, int max_new) {
  return score_all(qa, [&](const QARecord& r) { return answer_without_memory(r.question, model, tok, max_new); });
}

QAReport eval_gold_context(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa, int max_new) {
  return score_all(qa,
                   [&](const QARecord& r) { return answer_with_context(r.document, r.question, model, tok, max_new); });
}

std::vector<RetentionPoint> retention_curve(const std::vector<QARecord>& stream, std::size_t probe_docs,
                                            const std::vector<std::size_t>& checkpoints, CmtModel& model,
                                            const Tokenizer& tok, const InferenceOptions& opts) {
  if (checkpoints.empty()) throw InvalidArgument("retention: no checkpoints");
  for (std::size_t i = 1; i < checkpoints.size(); ++i)
    if (checkpoints[i] <= checkpoints[i - 1]) throw InvalidArgument("retention: checkpoints must be strictly ascending");
  if (probe_docs < 1 || probe_docs > checkpoints.front())
    throw InvalidArgument("retention: probe size " + std::to_string(probe_docs) + " must be in [1, " +
                          std::to_string(checkpoints.front()) + "]");
  const auto docs = documents_of(stream);
  if (checkpoints.back() > docs.size())
    throw InvalidArgument("retention: checkpoint " + std::to_string(checkpoints.back()) + " exceeds the stream's " +
                          std::to_string(docs.size()) + " documents");

  std::unordered_set<std::uint64_t> probe_ids;
  for (std::size_t i = 0; i < probe_docs; ++i) probe_ids.insert(docs[i].doc_id);
  std::vector<QARecord> probe;
  for (const auto& r : stream)
    if (probe_ids.count(r.doc_id) && !r.question.empty()) probe.push_back(r);

  // Compression is deterministic and per-document, so every prefix bank is a
  // prefix of the full one.
  const MemoryBank full = online_adapt(std::vector<Document>(docs.begin(), docs.begin() + checkpoints.back()), model, tok);
  std::vector<RetentionPoint> out;
  MemoryBank bank(full.k(), full.d());
  std::size_t next = 0;
  for (std::size_t cp : checkpoints) {
    while (next < cp) bank.insert(full[next++]);
    RetentionPoint pt;
    pt.docs_adapted = cp;
    pt.f1 = eval_qa(bank, model, tok, probe, opts).f1;
    out.push_back(pt);
  }
  const double first = out.front().f1;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (i == 0)
      out[i].ratio = 1.0;
    else
      out[i].ratio = first > 0 ? out[i].f1 / first : 0.0;
    out[i].decline = 1.0 - out[i].ratio;
  }
  return out;
}

std::vector<RobustnessPoint> robustness_sweep(const std::vector<QARecord>& qa, const std::vector<double>& ratios,
                                              CmtModel& model, const Tokenizer& tok, const InferenceOptions& opts,
                                              std::uint64_t seed) {
  std::vector<double> sorted = ratios;
  for (double r : sorted)
    if (!(r >= 0.0 && r < 1.0)) throw InvalidArgument("robustness: ratio " + std::to_string(r) + " outside [0, 1)");
  sorted.push_back(0.0);
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

  const auto docs = documents_of(qa);
  if (docs.empty()) throw InvalidArgument("robustness: empty QA set");
  const MemoryBank relevant = online_adapt(docs, model, tok);
  int max_irrelevant = 0;
  for (double r : sorted) max_irrelevant = std::max(max_irrelevant, distractor_count(r, static_cast<int>(docs.size())));
  const auto distractor_records = gen_irrelevant(seed, max_irrelevant);
  const MemoryBank irrelevant = online_adapt(documents_of(distractor_records), model, tok);

  std::vector<RobustnessPoint> out;
  for (double r : sorted) {
    const int n_irr = distractor_count(r, static_cast<int>(docs.size()));
    std::vector<const CondensedMemory*> units;
    for (const auto& m : relevant) units.push_back(&m);
    for (int i = 0; i < n_irr; ++i) units.push_back(&irrelevant[static_cast<std::size_t>(i)]);
    std::mt19937_64 rng(seed ^ static_cast<std::uint64_t>(n_irr));
    std::shuffle(units.begin(), units.end(), rng);
    MemoryBank bank(relevant.k(), relevant.d());
    for (const CondensedMemory* m : units) bank.insert(*m);
    RobustnessPoint pt;
    pt.ratio = r;
    pt.distractors = n_irr;
    pt.f1 = eval_qa(bank, model, tok, qa, opts).f1;
    out.push_back(pt);
  }
  const double base = out.front().f1;
  for (auto& pt : out) pt.relative_f1 = pt.ratio == 0.0 ? 1.0 : (base > 0 ? pt.f1 / base : 0.0);
  return out;
}

void write_qa_report_csv(const std::string& path, const QAReport& report) {
  auto out = open_csv(path);
  out << "doc_id,question,gold,prediction,em,f1\n";
  for (const auto& r : report.rows)
    out << r.doc_id << ',' << csv_field(r.question) << ',' << csv_field(r.gold) << ',' << csv_field(r.prediction) << ','
        << r.em << ',' << r.f1 << '\n';
  out << "ALL,,,," << report.em << ',' << report.f1 << '\n';
}

void write_retention_csv(const std::string& path, const std::vector<RetentionPoint>& curve) {
  auto out = open_csv(path);
  out << "docs_adapted,f1,retention_ratio,decline\n";
  for (const auto& p : curve) out << p.docs_adapted << ',' << p.f1 << ',' << p.ratio << ',' << p.decline << '\n';
}

void write_robustness_csv(const std::string& path, const std::vector<RobustnessPoint>& sweep) {
  auto out = open_csv(path);
  out << "ratio,distractors,f1,relative_f1\n";
  for (const auto& p : sweep) out << p.ratio << ',' << p.distractors << ',' << p.f1 << ',' << p.relative_f1 << '\n';
}

}  // namespace cmt
