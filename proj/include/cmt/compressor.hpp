#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/config.hpp"
#include "cmt/transformer.hpp"

namespace cmt {

// One document's latent memory: the k x d condensed-token states plus their
// column mean, used for similarity search.
struct CondensedMemory {
  std::uint64_t doc_id = 0;
  Tensor<float> matrix;  // k x d
  Tensor<float> pooled;  // 1 x d
  bool truncated = false;

  std::size_t k() const { return matrix.rows(); }
  std::size_t d() const { return matrix.cols(); }
  // The truncation flag is provenance, not content.
  bool operator==(const CondensedMemory& o) const {
    return doc_id == o.doc_id && matrix == o.matrix && pooled == o.pooled;
  }
};

// Column mean of a k x d matrix as 1 x d.
Tensor<float> pool_rows(const Tensor<float>& m);

// The document compressor: its own token embeddings and decoder stack plus the
// k learnable condensed-token embeddings appended after the content.
struct CompressorParams {
  ModelConfig cfg;
  Parameter tok_emb;  // V x d
  DecoderStack stack;
  Parameter soft_tokens;  // k x d

  CompressorParams() = default;
  explicit CompressorParams(const ModelConfig& cfg);
  void init(std::mt19937_64& rng);
  // Copies embedding and stack weights from the base LM (separate storage).
  void init_from(const LMParams& lm, std::mt19937_64& rng);
  ParamList params();
};

// Content tokens the compressor will actually read: trailing pad tokens are
// dropped and the head is kept when longer than context - k.
struct PreparedTokens {
  std::vector<int> tokens;
  bool truncated = false;
};
PreparedTokens prepare_for_compression(const std::vector<int>& token_ids, const ModelConfig& cfg);

// Graph form: the k x d memory rows for the given content tokens.
template <class T>
ad::Var<T> compress_graph(ad::Graph<T>& g, CompressorParams& params, const std::vector<int>& token_ids);

CondensedMemory compress(const std::vector<int>& token_ids, CompressorParams& params, std::uint64_t doc_id);
// Queries go through exactly the same function; doc_id is informational.
CondensedMemory compress_query(const std::vector<int>& query_token_ids, CompressorParams& params);

}  // namespace cmt
