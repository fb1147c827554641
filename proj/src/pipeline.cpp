#include "cmt/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <unordered_map>

#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/optimizer.hpp"

namespace cmt {

namespace {

void append(std::vector<int>& dst, const std::vector<int>& src) { dst.insert(dst.end(), src.begin(), src.end()); }

void require_memory(const CmtModel& model, const char* who) {
  if (!model.has_memory) throw ConfigError(std::string(who) + ": checkpoint has no memory modules (run train first)");
}

std::vector<std::vector<float>> snapshot(const ParamList& params) {
  std::vector<std::vector<float>> out;
  out.reserve(params.size());
  for (const Parameter* p : params) out.push_back(p->value.vec());
  return out;
}

void restore(const ParamList& params, const std::vector<std::vector<float>>& snap) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(snap[i].begin(), snap[i].end(), params[i]->value.data());
}

std::string describe(const LossBreakdown& l) {
  return "nll=" + std::to_string(l.nll) + " self_match=" + std::to_string(l.self_match) +
         " uniformity=" + std::to_string(l.uniformity) + " total=" + std::to_string(l.total);
}

}  // namespace

std::vector<int> query_prompt(const Tokenizer& tok, const std::string& question) {
  std::vector<int> out{Tokenizer::kBos};
  append(out, tok.encode(question));
  out.push_back(Tokenizer::kSep);
  return out;
}

std::vector<int> context_prompt(const Tokenizer& tok, const std::string& document, const std::string& question) {
  std::vector<int> out{Tokenizer::kBos};
  append(out, tok.encode(document));
  out.push_back(Tokenizer::kSep);
  append(out, tok.encode(question));
  out.push_back(Tokenizer::kSep);
  return out;
}

TeacherForced teacher_forced(const std::vector<int>& prompt, const std::vector<int>& answer_tokens) {
  if (prompt.empty()) throw InvalidArgument("teacher_forced: empty prompt");
  std::vector<int> seq = prompt;
  append(seq, answer_tokens);
  seq.push_back(Tokenizer::kEos);
  TeacherForced tf;
  tf.inputs.assign(seq.begin(), seq.end() - 1);
  tf.targets.assign(seq.begin() + 1, seq.end());
  tf.mask.assign(tf.targets.size(), 0);
  for (std::size_t i = prompt.size() - 1; i < tf.targets.size(); ++i) tf.mask[i] = 1;
  return tf;
}

// ---- pretraining -----------------------------------------------------------

PretrainReport pretrain_base(CmtModel& model, const Tokenizer& tok, const TrainConfig& cfg, std::ostream* log) {
  if (model.cfg.vocab_size != tok.vocab_size())
    throw ConfigError("pretrain: vocab_size " + std::to_string(model.cfg.vocab_size) + " does not match tokenizer " +
                      std::to_string(tok.vocab_size()));
  model.lm.set_frozen(false);
  ParamList params = model.base_params();
  AdamWOptions ao;
  ao.beta1 = cfg.adam_beta1;
  ao.beta2 = cfg.adam_beta2;
  ao.eps = cfg.adam_eps;
  ao.weight_decay = cfg.weight_decay;
  ao.grad_clip = cfg.grad_clip;
  AdamW opt(params, ao);
  const long warmup = std::max<long>(1, static_cast<long>(cfg.warmup_ratio * cfg.pretrain_steps));
  PretrainReport report;
  std::uint64_t index = 0;
  for (long step = 0; step < cfg.pretrain_steps; ++step) {
    ad::Graph<float> g(true);
    std::vector<ad::Var<float>> losses;
    for (int b = 0; b < cfg.pretrain_batch; ++b) {
      const PretrainSample s = draw_pretrain_sample(cfg.seed, index++);
      std::vector<int> seq{Tokenizer::kBos};
      if (!s.document.empty()) append(seq, tok.encode(s.document));
      if (!s.question.empty()) {
        if (!s.document.empty()) seq.push_back(Tokenizer::kSep);
        append(seq, tok.encode(s.question));
        seq.push_back(Tokenizer::kSep);
        append(seq, tok.encode(s.answer));
      }
      seq.push_back(Tokenizer::kEos);
      const std::size_t limit = static_cast<std::size_t>(model.cfg.context);
      if (seq.size() > limit + 1) seq.resize(limit + 1);
      std::vector<int> in(seq.begin(), seq.end() - 1), tgt(seq.begin() + 1, seq.end());
      std::vector<std::uint8_t> mask(tgt.size(), 1);
      auto logits = lm_forward<float>(g, model.lm, in, nullptr);
      losses.push_back(ad::cross_entropy(logits, tgt, mask));
    }
    ad::Var<float> total = losses.front();
    for (std::size_t i = 1; i < losses.size(); ++i) total = ad::add(total, losses[i]);
    total = ad::scale(total, 1.0f / static_cast<float>(losses.size()));
    const double value = total.value()[0];
    if (!std::isfinite(value)) throw Error("nan", "pretrain step " + std::to_string(step) + ": non-finite loss");
    g.backward(total);
    opt.step(cfg.pretrain_lr * constant_with_warmup(step, warmup));
    report.losses.push_back(value);
    if (log && (step % 250 == 0 || step + 1 == cfg.pretrain_steps))
      *log << "pretrain step " << step << " loss " << value << "\n";
  }
  model.lm.set_frozen(true);
  return report;
}

// ---- learning phase --------------------------------------------------------

LossBreakdown batch_loss(CmtModel& model, const Tokenizer& tok, const std::vector<const QARecord*>& batch,
                         const TrainConfig& cfg, bool backward, bool own_doc_only) {
  require_memory(model, "learning phase");
  if (batch.empty()) throw InvalidArgument("batch_loss: empty batch");
  ad::Graph<float> g(backward);

  // In-batch memory bank: one unit per distinct document.
  std::vector<std::uint64_t> doc_ids;
  std::unordered_map<std::uint64_t, std::size_t> slot;
  std::vector<ad::Var<float>> units, pooled;
  for (const QARecord* r : batch) {
    if (slot.count(r->doc_id)) continue;
    slot[r->doc_id] = units.size();
    const auto prepared = prepare_for_compression(tok.encode(r->document), model.cfg);
    auto m = compress_graph(g, model.compressor, prepared.tokens);
    units.push_back(m);
    pooled.push_back(ad::mean_rows(m));
  }

  std::vector<ad::Var<float>> nlls, sms;
  for (const QARecord* r : batch) {
    const auto q_tokens = prepare_for_compression(tok.encode(r->question), model.cfg);
    auto qm = compress_graph(g, model.compressor, q_tokens.tokens);
    if (cfg.self_matching) sms.push_back(self_matching_loss(ad::mean_rows(qm), pooled, slot.at(r->doc_id)));
    const std::size_t own = slot.at(r->doc_id);
    auto agg = own_doc_only ? aggregate(g, model.aggregator, qm, {units[own]}) : aggregate(g, model.aggregator, qm, units);
    auto prefix = align(g, model.alignment, agg);
    const TeacherForced tf = teacher_forced(query_prompt(tok, r->question), tok.encode(r->answer));
    auto logits = lm_forward(g, model.lm, tf.inputs, &prefix);
    if (cfg.memory_aware && cfg.alpha > 0) {
      std::vector<ad::Var<float>> others;
      if (cfg.demote_distractors)
        for (std::size_t j = 0; j < units.size(); ++j)
          if (j != own) others.push_back(units[j]);
      ad::Var<float> plain;
      if (others.empty()) {
        plain = lm_forward<float>(g, model.lm, tf.inputs, nullptr);
      } else {
        // The prior expert sees only the other documents' memories.
        auto distract = align(g, model.alignment, aggregate(g, model.aggregator, qm, others));
        plain = lm_forward(g, model.lm, tf.inputs, &distract);
      }
      logits = memory_aware_adjust(logits, plain, static_cast<float>(cfg.alpha));
    }
    nlls.push_back(nll_loss(logits, tf.targets, tf.mask));
  }

  auto mean_of = [](std::vector<ad::Var<float>>& xs) {
    ad::Var<float> s = xs.front();
    for (std::size_t i = 1; i < xs.size(); ++i) s = ad::add(s, xs[i]);
    return ad::scale(s, 1.0f / static_cast<float>(xs.size()));
  };
  LossBreakdown out;
  out.lambda_sm = cfg.self_matching ? cfg.lambda_sm : 0.0;
  out.lambda_u = cfg.lambda_u;
  ad::Var<float> total = mean_of(nlls);
  out.nll = total.value()[0];
  if (!sms.empty()) {
    auto sm = mean_of(sms);
    out.self_match = sm.value()[0];
    total = ad::add(total, ad::scale(sm, static_cast<float>(out.lambda_sm)));
  }
  if (cfg.lambda_u > 0 && pooled.size() >= 2) {
    auto u = uniformity_loss(g, pooled);
    out.uniformity = u.value()[0];
    total = ad::add(total, ad::scale(u, static_cast<float>(out.lambda_u)));
  }
  out.total = total.value()[0];
  if (!std::isfinite(out.total)) throw Error("nan", "non-finite loss: " + describe(out));
  if (backward) g.backward(total);
  return out;
}

LearningResult learning_phase(CmtModel& model, const Tokenizer& tok, const std::vector<QARecord>& train,
                              const std::vector<QARecord>& valid, const TrainConfig& cfg, std::ostream* log) {
  require_memory(model, "learning phase");
  for (const auto& r : train) {
    if (r.split != Split::Train)
      throw InvalidArgument("learning phase: training data contains a " + to_string(r.split) + " record (doc " +
                            std::to_string(r.doc_id) + ")");
    if (r.question.empty() || r.answer.empty())
      throw InvalidArgument("learning phase: training record for doc " + std::to_string(r.doc_id) + " has no QA pair");
  }
  for (const auto& r : valid)
    if (r.split != Split::Valid)
      throw InvalidArgument("learning phase: validation data contains a " + to_string(r.split) + " record (doc " +
                            std::to_string(r.doc_id) + ")");
  if (train.empty()) throw InvalidArgument("learning phase: no training records");
  if (cfg.batch_size < 1 || cfg.grad_accum < 1 || cfg.epochs < 1)
    throw ConfigError("learning phase: batch_size, grad_accum and epochs must be >= 1");

  LearningResult result;
  model.lm.set_frozen(true);
  const ParamList base = model.base_params();
  result.base_sha_before = params_sha256(base);

  ParamList params = model.memory_params();
  AdamWOptions ao;
  ao.beta1 = cfg.adam_beta1;
  ao.beta2 = cfg.adam_beta2;
  ao.eps = cfg.adam_eps;
  ao.weight_decay = cfg.weight_decay;
  ao.grad_clip = cfg.grad_clip;
  AdamW opt(params, ao);

  const std::size_t n = train.size();
  const long batches_per_epoch = static_cast<long>((n + cfg.batch_size - 1) / cfg.batch_size);
  const long total_steps = (batches_per_epoch * cfg.epochs + cfg.grad_accum - 1) / cfg.grad_accum;
  const long warmup = std::max<long>(1, static_cast<long>(std::ceil(cfg.warmup_ratio * total_steps)));
  const long initial_window = std::min<long>(10, batches_per_epoch);

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto valid_docs = documents_of(valid);
  InferenceOptions iopts = InferenceOptions::from(cfg);
  auto validate = [&](long step) {
    if (valid.empty()) return;
    const MemoryBank bank = online_adapt(valid_docs, model, tok);
    const QAReport rep = eval_qa(bank, model, tok, valid, iopts);
    result.validations.push_back({step, rep.em, rep.f1});
    if (log) *log << "valid step " << step << " em " << rep.em << " f1 " << rep.f1 << "\n";
    return;
  };

  std::vector<std::vector<float>> best;
  auto consider_best = [&](long step) {
    if (valid.empty()) return;
    const double f1 = result.validations.back().f1;
    if (f1 >= result.best_valid_f1) {
      result.best_valid_f1 = f1;
      result.best_step = step;
      best = snapshot(params);
    }
  };

  long step = 0;
  int micro = 0;
  double accum_total = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0;
    long epoch_batches = 0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      std::vector<const QARecord*> batch;
      for (std::size_t i = start; i < std::min(n, start + cfg.batch_size); ++i) batch.push_back(&train[order[i]]);
      LossBreakdown l;
      try {
        l = batch_loss(model, tok, batch, cfg, true, epoch < cfg.own_doc_epochs);
      } catch (const Error& e) {
        if (e.kind() == "nan") throw Error("nan", "learning phase aborted at step " + std::to_string(step) + ", epoch " +
                                                      std::to_string(epoch) + ": " + e.what());
        throw;
      }
      epoch_sum += l.total;
      ++epoch_batches;
      accum_total += l.total;
      if (epoch == 0 && epoch_batches <= initial_window) result.initial_loss += l.total / initial_window;
      if (++micro < cfg.grad_accum) continue;
      opt.step(cfg.lr * constant_with_warmup(step, warmup), static_cast<double>(micro));
      LossBreakdown logged = l;
      logged.total = accum_total / micro;
      result.steps.push_back({step, epoch, logged});
      micro = 0;
      accum_total = 0;
      ++step;
      if (cfg.valid_interval > 0 && step % cfg.valid_interval == 0) {
        validate(step);
        consider_best(step);
      }
    }
    result.epoch_losses.push_back(epoch_sum / static_cast<double>(epoch_batches));
    if (log) *log << "epoch " << epoch << " loss " << result.epoch_losses.back() << "\n";
  }
  if (micro > 0) {
    opt.step(cfg.lr * constant_with_warmup(step, warmup), static_cast<double>(micro));
    ++step;
  }
  validate(step);
  consider_best(step);
  if (!best.empty()) restore(params, best);

  result.base_sha_after = params_sha256(base);
  if (result.base_sha_after != result.base_sha_before)
    throw Error("frozen", "learning phase: base LM parameters changed (" + result.base_sha_before + " -> " +
                              result.base_sha_after + ")");
  return result;
}

// ---- online adaptation and answering ---------------------------------------

MemoryBank online_adapt(const std::vector<Document>& stream, CmtModel& model, const Tokenizer& tok) {
  require_memory(model, "online adaptation");
  MemoryBank bank(static_cast<std::size_t>(model.cfg.soft_tokens), static_cast<std::size_t>(model.cfg.d_model));
  for (const Document& d : stream) bank.insert(compress(tok.encode(d.text), model.compressor, d.doc_id));
  return bank;
}

InferenceOptions InferenceOptions::from(const TrainConfig& cfg) {
  InferenceOptions o;
  o.window = cfg.window;
  o.topk_filter = cfg.topk_filter;
  if (cfg.memory_aware_inference) o.memory_aware_alpha = cfg.alpha;
  o.max_new = cfg.max_answer_tokens;
  return o;
}

AnswerResult answer(const std::string& query, const MemoryBank& bank, CmtModel& model, const Tokenizer& tok,
                    const InferenceOptions& opts) {
  require_memory(model, "answer");
  if (bank.empty()) throw InvalidArgument("answer: memory bank is empty");
  if (opts.window < 1) throw InvalidArgument("answer: window must be >= 1");
  if (bank.k() != static_cast<std::size_t>(model.cfg.soft_tokens) ||
      bank.d() != static_cast<std::size_t>(model.cfg.d_model))
    throw ShapeError("answer: bank holds " + std::to_string(bank.k()) + "x" + std::to_string(bank.d()) +
                     " memories, model expects " + std::to_string(model.cfg.soft_tokens) + "x" +
                     std::to_string(model.cfg.d_model));
  AnswerResult out;
  const CondensedMemory q = compress_query(tok.encode(query), model.compressor);
  if (opts.topk_filter) {
    out.selected = bank.topk_select(q.pooled.span(), static_cast<std::size_t>(opts.window));
  } else {
    out.selected.resize(bank.size());
    std::iota(out.selected.begin(), out.selected.end(), std::size_t{0});
  }
  KVPrefix prefix;
  {
    ad::Graph<float> g(false);
    std::vector<ad::Var<float>> units;
    for (std::size_t i : out.selected) units.push_back(g.constant(bank[i].matrix));
    auto agg = aggregate(g, model.aggregator, g.constant(q.matrix), units);
    prefix = align(g, model.alignment, agg).to_tensors();
  }
  GenerateOptions go;
  go.max_new = opts.max_new;
  go.stop_token = Tokenizer::kEos;
  go.memory_aware_alpha = opts.memory_aware_alpha;
  out.tokens = generate_greedy(model.lm, query_prompt(tok, query), &prefix, go);
  out.text = tok.decode(out.tokens);
  return out;
}

std::string answer_without_memory(const std::string& query, CmtModel& model, const Tokenizer& tok, int max_new) {
  GenerateOptions go;
  go.max_new = max_new;
  go.stop_token = Tokenizer::kEos;
  return tok.decode(generate_greedy(model.lm, query_prompt(tok, query), nullptr, go));
}

std::string answer_with_context(const std::string& document, const std::string& query, CmtModel& model,
                                const Tokenizer& tok, int max_new) {
  GenerateOptions go;
  go.max_new = max_new;
  go.stop_token = Tokenizer::kEos;
  return tok.decode(generate_greedy(model.lm, context_prompt(tok, document, query), nullptr, go));
}

}  // namespace cmt
