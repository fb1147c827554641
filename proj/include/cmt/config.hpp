#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace cmt {

// Architecture hyperparameters shared by every network in the model.
struct ModelConfig {
  int vocab_size = 0;  // set from the tokenizer
  int d_model = 32;
  int n_layers = 2;    // frozen base LM depth
  int n_heads = 4;
  int mlp_mult = 4;
  int context = 128;
  int compressor_layers = 2;
  int soft_tokens = 8;  // k
  int agg_blocks = 4;
  int agg_heads = 4;
  int agg_ffn_mult = 2;
  int agg_offset = 64;           // nominal context length n for condensed-token positions
  bool agg_rope = true;
  bool agg_global_positions = false;  // running positions across units instead of per-unit reset
  int prefix_len = 8;  // p
  int align_hidden_mult = 2;
  double rope_base = 10000.0;
  double norm_eps = 1e-5;
  double init_std = 0.08;

  int head_dim() const { return d_model / n_heads; }
  // Throws ConfigError when the architecture is inconsistent.
  void validate() const;
};

struct TrainConfig {
  std::uint64_t seed = 1234;
  // learning phase
  int batch_size = 8;
  int valid_batch_size = 16;
  int grad_accum = 1;
  double lr = 1e-3;
  double warmup_ratio = 0.01;
  int epochs = 400;
  int valid_interval = 250;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;
  double alpha = 0.5;
  double lambda_sm = 0.1;
  double lambda_u = 0.01;
  bool memory_aware = true;
  bool self_matching = true;
  bool demote_distractors = false;  // demote with in-batch non-target memories instead of the prefix-free pass
  bool init_compressor_from_base = true;
  // Opening epochs in which each query aggregates over its own document only;
  // the in-batch bank is used afterwards.
  int own_doc_epochs = 10;
  int max_answer_tokens = 8;
  // inference
  int window = 8;
  bool topk_filter = true;
  bool memory_aware_inference = false;
  // base LM pretraining
  int pretrain_steps = 4000;
  int pretrain_batch = 8;
  double pretrain_lr = 3e-3;
  // synthetic data
  int facts_per_doc = 1;
  int train_docs = 256;
  int valid_docs = 32;
  int test_docs = 256;
};

struct Config {
  ModelConfig model;
  TrainConfig train;

  // Applies one key=value assignment. Unknown keys and unparsable values
  // throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  // Every field, in declaration order, as "key=value" lines.
  std::string to_text() const;
  static Config from_text(const std::string& text);
  static Config load(const std::string& path);
  void save(const std::string& path) const;
};

// Model-only keys; these are what a checkpoint records.
std::string model_config_text(const ModelConfig& m);
ModelConfig model_config_from_text(const std::string& text);

// The full-scale experiment values, kept for reference next to the desk defaults.
Config full_scale_preset();

}  // namespace cmt
