#pragma once

#include <random>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/config.hpp"
#include "cmt/parameter.hpp"
#include "cmt/transformer.hpp"

namespace cmt {

// One key or value head: d -> hidden -> d with SiLU.
struct AlignHead {
  Parameter w1, b1, w2, b2;
};

// Maps the aggregated memory M* (k x d) to a KV prefix for the base LM:
// one self-attention block over the k rows, replication of rows to p virtual
// tokens, then a separate MLP per (layer, key/value).
struct AlignParams {
  ModelConfig cfg;
  Parameter attn_norm, wq, wk, wv, wo;
  Parameter slot_gain;  // p x d; multiplies the replicated rows
  Parameter head_norm;
  std::vector<AlignHead> key_heads;    // one per LM layer
  std::vector<AlignHead> value_heads;  // one per LM layer

  AlignParams() = default;
  explicit AlignParams(const ModelConfig& cfg);
  void init(std::mt19937_64& rng);
  ParamList params();
};

// Row r of the replicated block is row (r mod k) of the attended memory; when
// p <= k that is simply the first p rows.
std::vector<std::size_t> replication_rows(std::size_t k, std::size_t p);

template <class T>
KVPrefixVars<T> align(ad::Graph<T>& g, AlignParams& params, ad::Var<T> aggregated);

// Convenience: runs align without gradients and returns tensors.
KVPrefix align_tensors(AlignParams& params, const Tensor<float>& aggregated);

}  // namespace cmt
