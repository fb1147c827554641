#pragma once

#include <random>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/config.hpp"
#include "cmt/parameter.hpp"

namespace cmt {

struct AggregatorBlock {
  Parameter q_norm, m_norm;
  Parameter wq, wk, wv, wo;
  Parameter ffn_norm;
  Parameter w_up, w_down;
};

// The set-aggregation network: pre-norm residual cross-attention blocks in
// which the compressed query's k rows attend over the rows of every selected
// memory unit.
struct AggregatorParams {
  ModelConfig cfg;
  std::vector<AggregatorBlock> blocks;

  AggregatorParams() = default;
  explicit AggregatorParams(const ModelConfig& cfg);
  void init(std::mt19937_64& rng);
  ParamList params();
};

// RoPE positions for the query rows and the concatenated unit rows. With the
// default per-unit scheme every unit's rows sit at n+1..n+k, the same slots
// as the query rows; the global scheme runs positions on across units.
struct AggregatorPositions {
  std::vector<std::size_t> query;
  std::vector<std::size_t> keys;
};
AggregatorPositions aggregator_positions(std::size_t k, std::size_t units, std::size_t base_offset, bool global);

// Rotates queries and keys (never values) to their condensed-token positions.
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> apply_rope_to_qk(ad::Var<T> queries, ad::Var<T> keys, std::size_t base_offset,
                                                   std::size_t k, std::size_t head_dim, bool global = false,
                                                   double rope_base = 10000.0);

// M* = psi(query_memory, selected_units), k x d. Throws on an empty selection
// or inconsistent shapes.
template <class T>
ad::Var<T> aggregate(ad::Graph<T>& g, AggregatorParams& params, ad::Var<T> query_memory,
                     const std::vector<ad::Var<T>>& selected_units);

}  // namespace cmt
