#pragma once

// A tiny randomly initialized model and matching training config, small
// enough that a full learning phase runs in well under a second.

#include <random>

#include "cmt/config.hpp"
#include "cmt/model.hpp"
#include "cmt/tokenizer.hpp"

namespace cmt::testing {

inline ModelConfig tiny_model_config(const Tokenizer& tok) {
  ModelConfig c;
  c.vocab_size = tok.vocab_size();
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.mlp_mult = 2;
  c.context = 48;
  c.compressor_layers = 1;
  c.soft_tokens = 2;
  c.agg_blocks = 1;
  c.agg_heads = 2;
  c.prefix_len = 2;
  c.init_std = 0.1;
  return c;
}

inline TrainConfig tiny_train_config() {
  TrainConfig t;
  t.seed = 5;
  t.batch_size = 4;
  t.epochs = 2;
  t.own_doc_epochs = 1;
  t.valid_interval = 3;
  t.window = 4;
  t.max_answer_tokens = 5;
  return t;
}

inline CmtModel tiny_model(const Tokenizer& tok, std::uint64_t seed) {
  CmtModel m(tiny_model_config(tok));
  std::mt19937_64 rng(seed);
  m.init_base(rng);
  m.init_memory(rng, true);
  m.lm.set_frozen(true);
  return m;
}

}  // namespace cmt::testing
