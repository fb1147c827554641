#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "cmt/config.hpp"
#include "cmt/corpus.hpp"
#include "cmt/memory_bank.hpp"
#include "cmt/model.hpp"
#include "cmt/objectives.hpp"
#include "cmt/tokenizer.hpp"

namespace cmt {

// ---- token layouts ---------------------------------------------------------

// "<bos> question <sep>": what the base LM sees when answering from memory
// (the KV prefix stands in for the document).
std::vector<int> query_prompt(const Tokenizer& tok, const std::string& question);
// "<bos> document <sep> question <sep>": the gold-context layout.
std::vector<int> context_prompt(const Tokenizer& tok, const std::string& document, const std::string& question);

// A teacher-forced sequence: prompt + answer + <eos>. inputs/targets are the
// shifted pair; mask marks the rows whose target is an answer token or <eos>.
struct TeacherForced {
  std::vector<int> inputs;
  std::vector<int> targets;
  std::vector<std::uint8_t> mask;
};
TeacherForced teacher_forced(const std::vector<int>& prompt, const std::vector<int>& answer_tokens);

// ---- base LM pretraining --------------------------------------------------

struct PretrainReport {
  std::vector<double> losses;  // per step
};

// Trains the base LM on synthetic text (see draw_pretrain_sample), then the
// caller freezes it. Deterministic for a fixed seed.
PretrainReport pretrain_base(CmtModel& model, const Tokenizer& tok, const TrainConfig& cfg, std::ostream* log = nullptr);

// ---- learning phase -------------------------------------------------------

struct StepLog {
  long step = 0;
  int epoch = 0;
  LossBreakdown loss;
};

struct ValidLog {
  long step = 0;
  double em = 0;
  double f1 = 0;
};

struct LearningResult {
  std::vector<StepLog> steps;
  std::vector<ValidLog> validations;
  std::vector<double> epoch_losses;  // mean total loss per epoch
  double initial_loss = 0;           // mean total loss over the first epoch's first window of steps
  double best_valid_f1 = -1;
  long best_step = -1;
  std::string base_sha_before;
  std::string base_sha_after;
};

// Trains compressor, condensed tokens, aggregator and alignment end to end
// with the base LM frozen. Each query aggregates over its batch's documents
// (its own included). Train records must be split train and valid records
// split valid; anything else is rejected. The best-validation parameters are
// restored at the end. Throws on a non-finite loss.
LearningResult learning_phase(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& train,
                              const std::vector<QARecord>& valid, const TrainConfig& cfg,
                              std::ostream* log = nullptr);

// Loss of one batch; with `backward` the gradients are accumulated into the
// memory modules' parameters. With `own_doc_only` each query aggregates over
// its own document alone.
LossBreakdown batch_loss(CmtModel& model, const Tokenizer& tok, const std::vector<const QARecord*>& batch,
                         const TrainConfig& cfg, bool backward, bool own_doc_only = false);

// ---- online adaptation and answering --------------------------------------

// One compressor forward pass per document, no gradients; the bank keeps
// stream order. Documents carry no questions by construction.
MemoryBank online_adapt(const std::vector<Document>& stream, CmtModel& model, const Tokenizer& tok);

struct InferenceOptions {
  int window = 8;
  bool topk_filter = true;
  std::optional<double> memory_aware_alpha;
  int max_new = 8;

  static InferenceOptions from(const TrainConfig& cfg);
};

struct AnswerResult {
  std::string text;
  std::vector<int> tokens;
  std::vector<std::size_t> selected;  // bank indices fed to the aggregator
};

// compress_query -> pool -> topk_select -> aggregate -> align -> greedy decode.
AnswerResult answer(const std::string& query, const MemoryBank& bank, CmtModel& model, const Tokenizer& tok,
                    const InferenceOptions& opts);

// Frozen base LM alone: prompt "<bos> question <sep>", no memory.
std::string answer_without_memory(const std::string& query, CmtModel& model, const Tokenizer& tok, int max_new = 8);
// Base LM with the gold document in its context window.
std::string answer_with_context(const std::string& document, const std::string& query, CmtModel& model,
                                const Tokenizer& tok, int max_new = 8);

}  // namespace cmt
