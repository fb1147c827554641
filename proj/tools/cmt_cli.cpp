// cmt: command-line driver for base pretraining, data generation, the
// learning phase, online adaptation and the evaluation protocols.

#include <chrono>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cmt/config.hpp"
#include "cmt/corpus.hpp"
#include "cmt/error.hpp"
#include "cmt/eval.hpp"
#include "cmt/memory_bank.hpp"
#include "cmt/model.hpp"
#include "cmt/pipeline.hpp"
#include "cmt/tokenizer.hpp"

namespace fs = std::filesystem;
using namespace cmt;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string out_dir = ".";
  std::string checkpoint;
  std::string bank;
  std::string stream;
  std::optional<int> window;
  std::optional<double> alpha;
  std::string ratio_list;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file");
  cmd->add_option("--set", c.overrides, "override one config key (key=value), repeatable");
  cmd->add_option("--seed", c.seed, "random seed");
  cmd->add_option("--out-dir", c.out_dir, "directory for outputs")->capture_default_str();
}

Config resolve(const Common& c) {
  Config cfg = c.config_path.empty() ? Config{} : Config::load(c.config_path);
  for (const auto& kv : c.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (c.seed) cfg.train.seed = *c.seed;
  if (c.window) cfg.train.window = *c.window;
  if (c.alpha) cfg.train.alpha = *c.alpha;
  if (cfg.model.vocab_size == 0) cfg.model.vocab_size = Tokenizer().vocab_size();
  return cfg;
}

void print_config(const std::string& command, const Config& cfg) {
  std::cout << "# cmt " << command << " resolved config\n" << cfg.to_text() << std::flush;
}

fs::path out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out_dir);
  return fs::path(c.out_dir) / name;
}

CmtModel load_checkpoint(const Common& c, Config& cfg) {
  if (c.checkpoint.empty()) throw InvalidArgument("--checkpoint is required");
  CmtModel m = CmtModel::load(c.checkpoint);
  m.lm.set_frozen(true);
  cfg.model = m.cfg;
  return m;
}

std::vector<QARecord> require_corpus(const std::string& path, const char* flag) {
  if (path.empty()) throw InvalidArgument(std::string(flag) + " is required");
  return load_corpus(path);
}

std::vector<double> parse_ratios(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw InvalidArgument("--ratio-list: cannot parse '" + item + "'");
    }
  }
  if (out.empty()) throw InvalidArgument("--ratio-list is empty");
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(std::stoul(item));
    } catch (const std::exception&) {
      throw InvalidArgument("--checkpoints: cannot parse '" + item + "'");
    }
  }
  return out;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Compression memory training at desk scale"};
  app.require_subcommand(1);
  Common c;

  auto* pretrain = app.add_subcommand("pretrain-base", "pretrain the base LM on synthetic text");
  add_common(pretrain, c);

  int docs = -1;
  auto* gen = app.add_subcommand("gen-data", "write train/valid/test corpora");
  add_common(gen, c);
  gen->add_option("--docs", docs, "number of test documents (overrides test_docs)");

  std::string data_dir;
  auto* train = app.add_subcommand("train", "run the learning phase on a pretrained base LM");
  add_common(train, c);
  train->add_option("--checkpoint", c.checkpoint, "base LM checkpoint")->required();
  train->add_option("--data-dir", data_dir, "directory with train.jsonl and valid.jsonl (default: --out-dir)");
  train->add_option("--alpha", c.alpha, "memory-aware adjustment weight");

  auto* adapt = app.add_subcommand("adapt", "compress a document stream into a memory bank");
  add_common(adapt, c);
  adapt->add_option("--checkpoint", c.checkpoint, "trained checkpoint")->required();
  adapt->add_option("--stream", c.stream, "corpus whose documents form the stream")->required();
  adapt->add_option("--bank", c.bank, "output bank path (default: <out-dir>/bank.cmtb)");

  std::string query;
  auto* ans = app.add_subcommand("answer", "answer one question from a memory bank");
  add_common(ans, c);
  ans->add_option("--checkpoint", c.checkpoint, "trained checkpoint")->required();
  ans->add_option("--bank", c.bank, "memory bank")->required();
  ans->add_option("--query", query, "question text")->required();
  ans->add_option("--window", c.window, "top-k window");
  ans->add_option("--alpha", c.alpha, "memory-aware adjustment weight (with memory_aware_inference=true)");

  bool baselines = false;
  auto* ev = app.add_subcommand("eval", "score a QA set against a memory bank (qa_report.csv)");
  add_common(ev, c);
  ev->add_option("--checkpoint", c.checkpoint, "trained checkpoint")->required();
  ev->add_option("--bank", c.bank, "memory bank")->required();
  ev->add_option("--stream", c.stream, "QA corpus to score")->required();
  ev->add_option("--window", c.window, "top-k window");
  ev->add_flag("--baselines", baselines, "also score the no-memory and gold-context baselines");

  std::size_t probe = 32;
  std::string retention_points = "32,64,128,256";
  auto* ret = app.add_subcommand("retention", "knowledge retention curve (retention.csv)");
  add_common(ret, c);
  ret->add_option("--checkpoint", c.checkpoint, "trained checkpoint")->required();
  ret->add_option("--stream", c.stream, "QA corpus in stream order")->required();
  ret->add_option("--window", c.window, "top-k window");
  ret->add_option("--probe", probe, "number of earliest documents probed")->capture_default_str();
  ret->add_option("--checkpoints", retention_points, "stream sizes to evaluate at")->capture_default_str();

  c.ratio_list = "0,0.2,0.4,0.6,0.8";
  auto* rob = app.add_subcommand("robustness", "distractor-ratio sweep (robustness.csv)");
  add_common(rob, c);
  rob->add_option("--checkpoint", c.checkpoint, "trained checkpoint")->required();
  rob->add_option("--stream", c.stream, "QA corpus")->required();
  rob->add_option("--window", c.window, "top-k window");
  rob->add_option("--ratio-list", c.ratio_list, "comma-separated distractor ratios")->capture_default_str();

  auto* inspect = app.add_subcommand("inspect-bank", "print a memory bank's shape and ids");
  add_common(inspect, c);
  inspect->add_option("--bank", c.bank, "memory bank")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Config cfg = resolve(c);
    const Tokenizer tok;
    const auto t0 = std::chrono::steady_clock::now();

    if (command == "pretrain-base") {
      print_config(command, cfg);
      CmtModel model(cfg.model);
      std::mt19937_64 rng(cfg.train.seed);
      model.init_base(rng);
      const auto report = pretrain_base(model, tok, cfg.train, &std::cout);
      const auto path = out_path(c, "base.cmtw");
      model.save(path.string());
      std::cout << "final_loss " << report.losses.back() << "\nwrote " << path.string() << "\n";
    } else if (command == "gen-data") {
      if (docs >= 0) cfg.train.test_docs = docs;
      print_config(command, cfg);
      const auto all = gen_synthetic(cfg.train.seed,
                                     SplitCounts{cfg.train.train_docs, cfg.train.valid_docs, cfg.train.test_docs},
                                     cfg.train.facts_per_doc);
      for (Split s : {Split::Train, Split::Valid, Split::Test}) {
        std::vector<QARecord> part;
        for (const auto& r : all)
          if (r.split == s) part.push_back(r);
        const auto path = out_path(c, to_string(s) + ".jsonl");
        save_corpus(part, path.string());
        std::cout << "wrote " << path.string() << " (" << part.size() << " records)\n";
      }
    } else if (command == "train") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const fs::path dir = data_dir.empty() ? fs::path(c.out_dir) : fs::path(data_dir);
      const auto tr = load_corpus((dir / "train.jsonl").string());
      const auto va = load_corpus((dir / "valid.jsonl").string());
      std::mt19937_64 rng(cfg.train.seed);
      model.init_memory(rng, cfg.train.init_compressor_from_base);
      const auto result = learning_phase(model, tok, tr, va, cfg.train, &std::cout);
      const auto path = out_path(c, "model.cmtw");
      model.save(path.string());
      std::cout << "initial_loss " << result.initial_loss << "\nfinal_epoch_loss " << result.epoch_losses.back()
                << "\nbest_valid_f1 " << result.best_valid_f1 << " at step " << result.best_step << "\nbase_sha256 "
                << result.base_sha_after << "\nwrote " << path.string() << "\n";
    } else if (command == "adapt") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const auto stream = documents_of(require_corpus(c.stream, "--stream"));
      const MemoryBank bank = online_adapt(stream, model, tok);
      const std::string path = c.bank.empty() ? out_path(c, "bank.cmtb").string() : c.bank;
      bank.save(path);
      std::cout << "adapted " << bank.size() << " documents in " << seconds_since(t0) << " s\nwrote " << path << "\n";
    } else if (command == "answer") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const MemoryBank bank = MemoryBank::load(c.bank);
      const auto result = answer(query, bank, model, tok, InferenceOptions::from(cfg.train));
      std::cout << "selected";
      for (std::size_t i : result.selected) std::cout << ' ' << bank[i].doc_id;
      std::cout << "\nanswer: " << result.text << "\n";
    } else if (command == "eval") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const MemoryBank bank = MemoryBank::load(c.bank);
      const auto qa = require_corpus(c.stream, "--stream");
      const QAReport rep = eval_qa(bank, model, tok, qa, InferenceOptions::from(cfg.train));
      const auto path = out_path(c, "qa_report.csv");
      write_qa_report_csv(path.string(), rep);
      std::cout << "cmt em " << rep.em << " f1 " << rep.f1 << " n " << rep.n << "\n";
      if (baselines) {
        const QAReport none = eval_no_memory(model, tok, qa, cfg.train.max_answer_tokens);
        const QAReport gold = eval_gold_context(model, tok, qa, cfg.train.max_answer_tokens);
        std::cout << "no_memory em " << none.em << " f1 " << none.f1 << "\ngold_context em " << gold.em << " f1 "
                  << gold.f1 << "\n";
      }
      std::cout << "wrote " << path.string() << "\n";
    } else if (command == "retention") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const auto stream = require_corpus(c.stream, "--stream");
      const auto curve =
          retention_curve(stream, probe, parse_sizes(retention_points), model, tok, InferenceOptions::from(cfg.train));
      const auto path = out_path(c, "retention.csv");
      write_retention_csv(path.string(), curve);
      for (const auto& p : curve) std::cout << "docs " << p.docs_adapted << " f1 " << p.f1 << " ratio " << p.ratio << "\n";
      std::cout << "wrote " << path.string() << "\n";
    } else if (command == "robustness") {
      CmtModel model = load_checkpoint(c, cfg);
      print_config(command, cfg);
      const auto qa = require_corpus(c.stream, "--stream");
      const auto sweep = robustness_sweep(qa, parse_ratios(c.ratio_list), model, tok, InferenceOptions::from(cfg.train),
                                          cfg.train.seed);
      const auto path = out_path(c, "robustness.csv");
      write_robustness_csv(path.string(), sweep);
      for (const auto& p : sweep) std::cout << "ratio " << p.ratio << " relative_f1 " << p.relative_f1 << "\n";
      std::cout << "wrote " << path.string() << "\n";
    } else if (command == "inspect-bank") {
      print_config(command, cfg);
      const MemoryBank bank = MemoryBank::load(c.bank);
      std::cout << "k " << bank.k() << "\nd " << bank.d() << "\ncount " << bank.size() << "\nids";
      for (const auto& e : bank) std::cout << ' ' << e.doc_id;
      std::cout << "\n";
    }
  } catch (const Error& e) {
    std::cerr << "error kind=" << e.kind() << " command=" << command << " message=\"" << e.what() << "\"\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error kind=runtime command=" << command << " message=\"" << e.what() << "\"\n";
    return 1;
  }
  return 0;
}
