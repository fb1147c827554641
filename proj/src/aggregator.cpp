#include "cmt/aggregator.hpp"

#include "cmt/layers.hpp"

namespace cmt {

AggregatorParams::AggregatorParams(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  const std::size_t d = cfg.d_model, f = static_cast<std::size_t>(cfg.d_model * cfg.agg_ffn_mult);
  for (int b = 0; b < cfg.agg_blocks; ++b) {
    const std::string n = "aggregator.block" + std::to_string(b);
    AggregatorBlock blk;
    blk.q_norm = Parameter(n + ".q_norm", {d});
    blk.m_norm = Parameter(n + ".m_norm", {d});
    blk.wq = Parameter(n + ".wq", {d, d});
    blk.wk = Parameter(n + ".wk", {d, d});
    blk.wv = Parameter(n + ".wv", {d, d});
    blk.wo = Parameter(n + ".wo", {d, d});
    blk.ffn_norm = Parameter(n + ".ffn_norm", {d});
    blk.w_up = Parameter(n + ".w_up", {d, f});
    blk.w_down = Parameter(n + ".w_down", {f, d});
    blocks.push_back(std::move(blk));
  }
}

void AggregatorParams::init(std::mt19937_64& rng) {
  const double s = cfg.init_std;
  const double out_s = s / std::sqrt(2.0 * static_cast<double>(blocks.size()));
  for (auto& b : blocks) {
    init_constant(b.q_norm, 1.0f);
    init_constant(b.m_norm, 1.0f);
    init_normal(b.wq, rng, s);
    init_normal(b.wk, rng, s);
    init_normal(b.wv, rng, s);
    init_normal(b.wo, rng, out_s);
    init_constant(b.ffn_norm, 1.0f);
    init_normal(b.w_up, rng, s);
    init_normal(b.w_down, rng, out_s);
  }
}

ParamList AggregatorParams::params() {
  ParamList out;
  for (auto& b : blocks)
    for (Parameter* p : {&b.q_norm, &b.m_norm, &b.wq, &b.wk, &b.wv, &b.wo, &b.ffn_norm, &b.w_up, &b.w_down})
      out.push_back(p);
  return out;
}

AggregatorPositions aggregator_positions(std::size_t k, std::size_t units, std::size_t base_offset, bool global) {
  AggregatorPositions pos;
  pos.query = iota_positions(base_offset + 1, k);
  pos.keys.reserve(units * k);
  for (std::size_t u = 0; u < units; ++u)
    for (std::size_t i = 0; i < k; ++i) pos.keys.push_back(base_offset + 1 + (global ? u * k : 0) + i);
  return pos;
}

template <class T>
std::pair<ad::Var<T>, ad::Var<T>> apply_rope_to_qk(ad::Var<T> queries, ad::Var<T> keys, std::size_t base_offset,
                                                   std::size_t k, std::size_t head_dim, bool global, double rope_base) {
  if (k == 0 || queries.rows() != k || keys.rows() % k != 0)
    throw ShapeError("apply_rope_to_qk: expected " + std::to_string(k) + " query rows and a multiple of " +
                     std::to_string(k) + " key rows, got " + to_string(queries.shape()) + " / " +
                     to_string(keys.shape()));
  const auto pos = aggregator_positions(k, keys.rows() / k, base_offset, global);
  return {ad::rope(queries, pos.query, head_dim, rope_base), ad::rope(keys, pos.keys, head_dim, rope_base)};
}

template <class T>
ad::Var<T> aggregate(ad::Graph<T>& g, AggregatorParams& params, ad::Var<T> query_memory,
                     const std::vector<ad::Var<T>>& selected_units) {
  const auto& cfg = params.cfg;
  if (selected_units.empty()) throw InvalidArgument("aggregate: no memory units selected");
  const std::size_t k = static_cast<std::size_t>(cfg.soft_tokens), d = static_cast<std::size_t>(cfg.d_model);
  const Shape want{k, d};
  if (query_memory.shape() != want)
    throw ShapeError("aggregate: query memory expected " + to_string(want) + ", got " + to_string(query_memory.shape()));
  for (const auto& u : selected_units)
    if (u.shape() != want)
      throw ShapeError("aggregate: memory unit expected " + to_string(want) + ", got " + to_string(u.shape()));

  const std::size_t heads = static_cast<std::size_t>(cfg.agg_heads);
  const std::size_t hd = d / heads;
  const T eps = static_cast<T>(cfg.norm_eps);
  auto memory = selected_units.size() == 1 ? selected_units.front() : ad::concat_rows(selected_units);
  auto x = query_memory;
  for (auto& blk : params.blocks) {
    auto hq = ad::rms_norm_rows(x, g.param(blk.q_norm), eps);
    auto hm = ad::rms_norm_rows(memory, g.param(blk.m_norm), eps);
    auto q = ad::matmul(hq, g.param(blk.wq));
    auto kk = ad::matmul(hm, g.param(blk.wk));
    auto v = ad::matmul(hm, g.param(blk.wv));
    if (cfg.agg_rope) {
      std::tie(q, kk) = apply_rope_to_qk(q, kk, static_cast<std::size_t>(cfg.agg_offset), k, hd,
                                         cfg.agg_global_positions, cfg.rope_base);
    }
    auto att = multi_head_attention(q, kk, v, heads);
    x = ad::add(x, ad::matmul(att, g.param(blk.wo)));
    auto f = ad::rms_norm_rows(x, g.param(blk.ffn_norm), eps);
    x = ad::add(x, ad::matmul(ad::silu(ad::matmul(f, g.param(blk.w_up))), g.param(blk.w_down)));
  }
  return x;
}

template std::pair<ad::Var<float>, ad::Var<float>> apply_rope_to_qk(ad::Var<float>, ad::Var<float>, std::size_t,
                                                                    std::size_t, std::size_t, bool, double);
template std::pair<ad::Var<double>, ad::Var<double>> apply_rope_to_qk(ad::Var<double>, ad::Var<double>, std::size_t,
                                                                      std::size_t, std::size_t, bool, double);
template ad::Var<float> aggregate(ad::Graph<float>&, AggregatorParams&, ad::Var<float>,
                                  const std::vector<ad::Var<float>>&);
template ad::Var<double> aggregate(ad::Graph<double>&, AggregatorParams&, ad::Var<double>,
                                   const std::vector<ad::Var<double>>&);

}  // namespace cmt
