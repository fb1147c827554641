#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cmt {

enum class Split { Train, Valid, Test };

std::string to_string(Split s);
Split split_from_string(const std::string& s);

// One document with (optionally) one question about it. Distractor documents
// carry relevant == false and no question/answer.
struct QARecord {
  std::uint64_t doc_id = 0;
  std::string document;
  std::string question;
  std::string answer;
  Split split = Split::Train;
  bool relevant = true;

  bool operator==(const QARecord&) const = default;
};

// A document as seen by online adaptation: no question, no answer.
struct Document {
  std::uint64_t doc_id = 0;
  std::string text;
};

// Distinct documents of `records` in first-occurrence order.
std::vector<Document> documents_of(const std::vector<QARecord>& records);

// Newline-delimited JSON, one object per line with keys doc_id, document,
// question, answer, split. Lines without question/answer are distractors.
std::vector<QARecord> load_corpus(const std::string& path);
std::vector<QARecord> parse_corpus(const std::string& text);
void save_corpus(const std::vector<QARecord>& records, const std::string& path);
std::string serialize_corpus(const std::vector<QARecord>& records);

// Words of the closed synthetic vocabulary (template words and both entity
// namespaces).
std::vector<std::string> synthetic_vocabulary();

struct SplitCounts {
  int train = 0;
  int valid = 0;
  int test = 0;
  int total() const { return train + valid + test; }
};

// Documents stating "the code for <entity> is <4 digits> ." facts, one QA per
// fact. Entities are unique across all returned documents; doc ids start at
// `first_id`. Documents are assigned to splits in train, valid, test order.
std::vector<QARecord> gen_synthetic(std::uint64_t seed, SplitCounts counts, int facts_per_doc,
                                    std::uint64_t first_id = 0);
std::vector<QARecord> gen_synthetic(std::uint64_t seed, int n_docs, int facts_per_doc);

// Distractor documents over an entity namespace disjoint from gen_synthetic's.
std::vector<QARecord> gen_irrelevant(std::uint64_t seed, int n, std::uint64_t first_id = 1'000'000);

// Number of distractors injected so the irrelevant fraction of the stream is
// about `ratio`: ceil(ratio / (1 - ratio) * relevant_docs).
int distractor_count(double ratio, int relevant_docs);

// Entity string (e.g. "calm owl") of a generated fact sentence; empty if the
// text is not a generated document or question.
std::string entity_of(const std::string& text);

// One base-LM pretraining sample drawn from the synthetic generator families
// with fresh random entities: a document alone, a document followed by a
// question and its answer, a question with its answer but no document, or a
// distractor document. Absent parts are empty.
struct PretrainSample {
  std::string document;
  std::string question;
  std::string answer;
};
PretrainSample draw_pretrain_sample(std::uint64_t seed, std::uint64_t index);

}  // namespace cmt
