#include "cmt/compressor.hpp"

#include "cmt/layers.hpp"
#include "cmt/tokenizer.hpp"

namespace cmt {

Tensor<float> pool_rows(const Tensor<float>& m) {
  const std::size_t k = m.rows(), d = m.cols();
  Tensor<float> out({1, d});
  if (k == 0) return out;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < d; ++j) out[j] += m.at(i, j);
  for (auto& x : out.vec()) x /= static_cast<float>(k);
  return out;
}

CompressorParams::CompressorParams(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  if (cfg.vocab_size <= 0) throw ConfigError("vocab_size must be set before building the compressor");
  const std::size_t v = cfg.vocab_size, d = cfg.d_model, k = cfg.soft_tokens;
  tok_emb = Parameter("compressor.tok_emb", {v, d});
  stack = DecoderStack("compressor", cfg.compressor_layers, cfg);
  soft_tokens = Parameter("compressor.soft_tokens", {k, d});
}

void CompressorParams::init(std::mt19937_64& rng) {
  init_normal(tok_emb, rng, cfg.init_std * 4.0);
  stack.init(rng, cfg);
  init_normal(soft_tokens, rng, cfg.init_std * 4.0);
}

void CompressorParams::init_from(const LMParams& lm, std::mt19937_64& rng) {
  init(rng);
  if (lm.cfg.d_model != cfg.d_model || lm.cfg.vocab_size != cfg.vocab_size)
    throw ConfigError("compressor and base LM disagree on d_model / vocab_size");
  tok_emb.value = lm.tok_emb.value;
  const std::size_t shared = std::min(stack.layers.size(), lm.stack.layers.size());
  for (std::size_t l = 0; l < shared; ++l) {
    auto& dst = stack.layers[l];
    const auto& src = lm.stack.layers[l];
    dst.attn_norm.value = src.attn_norm.value;
    dst.wq.value = src.wq.value;
    dst.wk.value = src.wk.value;
    dst.wv.value = src.wv.value;
    dst.wo.value = src.wo.value;
    dst.mlp_norm.value = src.mlp_norm.value;
    dst.w_up.value = src.w_up.value;
    dst.w_down.value = src.w_down.value;
  }
  stack.final_norm.value = lm.stack.final_norm.value;
  // Condensed tokens start from the separator embedding plus noise.
  std::normal_distribution<double> noise(0.0, cfg.init_std);
  const auto sep = lm.tok_emb.value.row(Tokenizer::kSep);
  for (std::size_t i = 0; i < soft_tokens.value.rows(); ++i)
    for (std::size_t j = 0; j < soft_tokens.value.cols(); ++j)
      soft_tokens.value.at(i, j) = sep[j] + static_cast<float>(noise(rng));
  for (Parameter* p : params()) p->zero_grad();
}

ParamList CompressorParams::params() {
  ParamList out{&tok_emb};
  stack.collect(out);
  out.push_back(&soft_tokens);
  return out;
}

PreparedTokens prepare_for_compression(const std::vector<int>& token_ids, const ModelConfig& cfg) {
  PreparedTokens out;
  std::size_t n = token_ids.size();
  while (n > 0 && token_ids[n - 1] == Tokenizer::kPad) --n;
  const std::size_t budget = static_cast<std::size_t>(cfg.context - cfg.soft_tokens);
  if (n > budget) {
    n = budget;
    out.truncated = true;
  }
  out.tokens.assign(token_ids.begin(), token_ids.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

template <class T>
ad::Var<T> compress_graph(ad::Graph<T>& g, CompressorParams& params, const std::vector<int>& token_ids) {
  const auto prepared = prepare_for_compression(token_ids, params.cfg);
  const std::size_t n = prepared.tokens.size();
  const std::size_t k = static_cast<std::size_t>(params.cfg.soft_tokens);
  auto soft = g.param(params.soft_tokens);
  auto x = n == 0 ? soft : ad::concat_rows<T>({ad::embedding(g.param(params.tok_emb), prepared.tokens), soft});
  auto h = decoder_forward<T>(g, params.stack, x, nullptr, params.cfg);
  return ad::slice_rows(h, n, n + k);
}

CondensedMemory compress(const std::vector<int>& token_ids, CompressorParams& params, std::uint64_t doc_id) {
  ad::Graph<float> g(false);
  CondensedMemory mem;
  mem.doc_id = doc_id;
  mem.truncated = prepare_for_compression(token_ids, params.cfg).truncated;
  mem.matrix = compress_graph(g, params, token_ids).value();
  mem.pooled = pool_rows(mem.matrix);
  return mem;
}

CondensedMemory compress_query(const std::vector<int>& query_token_ids, CompressorParams& params) {
  return compress(query_token_ids, params, 0);
}

template ad::Var<float> compress_graph(ad::Graph<float>&, CompressorParams&, const std::vector<int>&);
template ad::Var<double> compress_graph(ad::Graph<double>&, CompressorParams&, const std::vector<int>&);

}  // namespace cmt
