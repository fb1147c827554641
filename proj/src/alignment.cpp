#include "cmt/alignment.hpp"

#include "cmt/layers.hpp"

namespace cmt {

namespace {

AlignHead make_head(const std::string& name, std::size_t d, std::size_t hidden) {
  return AlignHead{Parameter(name + ".w1", {d, hidden}), Parameter(name + ".b1", {hidden}),
                   Parameter(name + ".w2", {hidden, d}), Parameter(name + ".b2", {d})};
}

template <class T>
ad::Var<T> run_head(ad::Graph<T>& g, AlignHead& h, ad::Var<T> x) {
  auto hidden = ad::silu(ad::add_bias(ad::matmul(x, g.param(h.w1)), g.param(h.b1)));
  return ad::add_bias(ad::matmul(hidden, g.param(h.w2)), g.param(h.b2));
}

}  // namespace

AlignParams::AlignParams(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  const std::size_t d = cfg.d_model, p = cfg.prefix_len;
  const std::size_t hidden = static_cast<std::size_t>(cfg.d_model * cfg.align_hidden_mult);
  attn_norm = Parameter("align.attn_norm", {d});
  wq = Parameter("align.wq", {d, d});
  wk = Parameter("align.wk", {d, d});
  wv = Parameter("align.wv", {d, d});
  wo = Parameter("align.wo", {d, d});
  slot_gain = Parameter("align.slot_gain", {p, d});
  head_norm = Parameter("align.head_norm", {d});
  for (int l = 0; l < cfg.n_layers; ++l) {
    key_heads.push_back(make_head("align.layer" + std::to_string(l) + ".key", d, hidden));
    value_heads.push_back(make_head("align.layer" + std::to_string(l) + ".value", d, hidden));
  }
}

void AlignParams::init(std::mt19937_64& rng) {
  const double s = cfg.init_std;
  init_constant(attn_norm, 1.0f);
  init_normal(wq, rng, s);
  init_normal(wk, rng, s);
  init_normal(wv, rng, s);
  init_normal(wo, rng, s);
  init_constant(slot_gain, 1.0f);
  init_constant(head_norm, 1.0f);
  for (auto* heads : {&key_heads, &value_heads}) {
    for (auto& h : *heads) {
      init_normal(h.w1, rng, s * 2.0);
      init_constant(h.b1, 0.0f);
      init_normal(h.w2, rng, s * 2.0);
      init_constant(h.b2, 0.0f);
    }
  }
}

ParamList AlignParams::params() {
  ParamList out{&attn_norm, &wq, &wk, &wv, &wo, &slot_gain, &head_norm};
  for (std::size_t l = 0; l < key_heads.size(); ++l) {
    for (auto* h : {&key_heads[l], &value_heads[l]})
      for (Parameter* p : {&h->w1, &h->b1, &h->w2, &h->b2}) out.push_back(p);
  }
  return out;
}

std::vector<std::size_t> replication_rows(std::size_t k, std::size_t p) {
  std::vector<std::size_t> rows(p);
  for (std::size_t r = 0; r < p; ++r) rows[r] = r % k;
  return rows;
}

template <class T>
KVPrefixVars<T> align(ad::Graph<T>& g, AlignParams& params, ad::Var<T> aggregated) {
  const auto& cfg = params.cfg;
  const std::size_t k = static_cast<std::size_t>(cfg.soft_tokens), d = static_cast<std::size_t>(cfg.d_model);
  const std::size_t p = static_cast<std::size_t>(cfg.prefix_len);
  if (aggregated.shape() != Shape{k, d})
    throw ShapeError("align: expected M* of shape " + to_string(Shape{k, d}) + ", got " +
                     to_string(aggregated.shape()));
  const T eps = static_cast<T>(cfg.norm_eps);
  auto h = ad::rms_norm_rows(aggregated, g.param(params.attn_norm), eps);
  auto att = multi_head_attention(ad::matmul(h, g.param(params.wq)), ad::matmul(h, g.param(params.wk)),
                                  ad::matmul(h, g.param(params.wv)), static_cast<std::size_t>(cfg.n_heads));
  auto x = ad::add(aggregated, ad::matmul(att, g.param(params.wo)));

  auto rows = p <= k ? ad::slice_rows(x, 0, p) : ad::tile_rows(x, p);
  rows = ad::mul(rows, g.param(params.slot_gain));
  rows = ad::rms_norm_rows(rows, g.param(params.head_norm), eps);

  KVPrefixVars<T> out;
  for (std::size_t l = 0; l < params.key_heads.size(); ++l) {
    out.keys.push_back(run_head(g, params.key_heads[l], rows));
    out.values.push_back(run_head(g, params.value_heads[l], rows));
  }
  return out;
}

KVPrefix align_tensors(AlignParams& params, const Tensor<float>& aggregated) {
  ad::Graph<float> g(false);
  return align(g, params, g.constant(aggregated)).to_tensors();
}

template KVPrefixVars<float> align(ad::Graph<float>&, AlignParams&, ad::Var<float>);
template KVPrefixVars<double> align(ad::Graph<double>&, AlignParams&, ad::Var<double>);

}  // namespace cmt
