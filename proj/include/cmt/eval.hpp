#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cmt/corpus.hpp"
#include "cmt/memory_bank.hpp"
#include "cmt/model.hpp"
#include "cmt/pipeline.hpp"
#include "cmt/tokenizer.hpp"

namespace cmt {

// Lowercase, punctuation stripped, whitespace collapsed and trimmed.
std::string normalize_answer(const std::string& s);

struct EmF1 {
  double em = 0;
  double f1 = 0;
};
// Exact match of normalized strings and token-level F1 over normalized
// whitespace tokens (bag-of-words overlap). Two empty answers score (1, 1),
// exactly one empty scores (0, 0).
EmF1 em_f1(const std::string& prediction, const std::string& gold);

struct QAPrediction {
  std::uint64_t doc_id = 0;
  std::string question;
  std::string gold;
  std::string prediction;
  double em = 0;
  double f1 = 0;
};

struct QAReport {
  double em = 0;
  double f1 = 0;
  std::size_t n = 0;
  std::vector<QAPrediction> rows;
};

// Answers every record with a question against `bank`. Throws when there are
// no questions to score.
QAReport eval_qa(const MemoryBank& bank, CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa,
                 const InferenceOptions& opts);
// Reference systems over the same records: the frozen base LM without memory
// and with the gold document in context.
QAReport eval_no_memory(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa, int max_new = 8);
QAReport eval_gold_context(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& qa, int max_new = 8);

struct RetentionPoint {
  std::size_t docs_adapted = 0;
  double f1 = 0;
  double ratio = 0;    // f1 / f1 at the first checkpoint
  double decline = 0;  // 1 - ratio
};

// F1 on the QA pairs of the first `probe_docs` documents of `stream` after
// adapting to the first P documents, for each P in `checkpoints` (each must
// be >= probe_docs and <= the stream's document count, strictly ascending).
std::vector<RetentionPoint> retention_curve(const std::vector<QARecord>& stream, std::size_t probe_docs,
                                            const std::vector<std::size_t>& checkpoints, CmtModel& model,
                                            const Tokenizer& tok, const InferenceOptions& opts);

struct RobustnessPoint {
  double ratio = 0;
  int distractors = 0;
  double f1 = 0;
  double relative_f1 = 0;  // f1 / f1 at ratio 0
};

// Injects distractor documents so they make up about `ratio` of the stream,
// shuffles the stream with `seed`, and scores the QA set. Ratios are reported
// in ascending order; ratio 0 is always evaluated as the reference.
std::vector<RobustnessPoint> robustness_sweep(const std::vector<QARecord>& qa, const std::vector<double>& ratios,
                                              CmtModel& model, const Tokenizer& tok, const InferenceOptions& opts,
                                              std::uint64_t seed);

void write_qa_report_csv(const std::string& path, const QAReport& report);
void write_retention_csv(const std::string& path, const std::vector<RetentionPoint>& curve);
void write_robustness_csv(const std::string& path, const std::vector<RobustnessPoint>& sweep);

}  // namespace cmt
