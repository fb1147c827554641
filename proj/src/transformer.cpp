#include "cmt/transformer.hpp"

#include "cmt/layers.hpp"

namespace cmt {

void init_normal(Parameter& p, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  for (auto& x : p.value.vec()) x = static_cast<float>(dist(rng));
  p.zero_grad();
}

void init_constant(Parameter& p, float v) {
  p.value.fill(v);
  p.zero_grad();
}

DecoderStack::DecoderStack(const std::string& prefix, int n_layers, const ModelConfig& cfg) {
  const std::size_t d = cfg.d_model, m = static_cast<std::size_t>(cfg.d_model * cfg.mlp_mult);
  for (int l = 0; l < n_layers; ++l) {
    const std::string n = prefix + ".layer" + std::to_string(l);
    DecoderLayer layer;
    layer.attn_norm = Parameter(n + ".attn_norm", {d});
    layer.wq = Parameter(n + ".wq", {d, d});
    layer.wk = Parameter(n + ".wk", {d, d});
    layer.wv = Parameter(n + ".wv", {d, d});
    layer.wo = Parameter(n + ".wo", {d, d});
    layer.mlp_norm = Parameter(n + ".mlp_norm", {d});
    layer.w_up = Parameter(n + ".w_up", {d, m});
    layer.w_down = Parameter(n + ".w_down", {m, d});
    layers.push_back(std::move(layer));
  }
  final_norm = Parameter(prefix + ".final_norm", {d});
}

void DecoderStack::init(std::mt19937_64& rng, const ModelConfig& cfg) {
  const double s = cfg.init_std;
  const double out_s = s / std::sqrt(2.0 * static_cast<double>(layers.size()));
  for (auto& l : layers) {
    init_constant(l.attn_norm, 1.0f);
    init_normal(l.wq, rng, s);
    init_normal(l.wk, rng, s);
    init_normal(l.wv, rng, s);
    init_normal(l.wo, rng, out_s);
    init_constant(l.mlp_norm, 1.0f);
    init_normal(l.w_up, rng, s);
    init_normal(l.w_down, rng, out_s);
  }
  init_constant(final_norm, 1.0f);
}

void DecoderStack::collect(ParamList& out) {
  for (auto& l : layers) {
    for (Parameter* p : {&l.attn_norm, &l.wq, &l.wk, &l.wv, &l.wo, &l.mlp_norm, &l.w_up, &l.w_down}) out.push_back(p);
  }
  out.push_back(&final_norm);
}

KVPrefix KVPrefix::empty(const ModelConfig& cfg) {
  KVPrefix p;
  for (int l = 0; l < cfg.n_layers; ++l) {
    p.keys.emplace_back(Shape{0, static_cast<std::size_t>(cfg.d_model)});
    p.values.emplace_back(Shape{0, static_cast<std::size_t>(cfg.d_model)});
  }
  return p;
}

void KVPrefix::validate(const ModelConfig& cfg) const {
  if (keys.size() != static_cast<std::size_t>(cfg.n_layers) || values.size() != keys.size())
    throw ShapeError("kv prefix has " + std::to_string(keys.size()) + " key / " + std::to_string(values.size()) +
                     " value layers, model has " + std::to_string(cfg.n_layers));
  const Shape want{length(), static_cast<std::size_t>(cfg.d_model)};
  for (std::size_t l = 0; l < keys.size(); ++l) {
    if (keys[l].shape() != want || values[l].shape() != want)
      throw ShapeError("kv prefix layer " + std::to_string(l) + ": expected " + to_string(want) + ", got " +
                       to_string(keys[l].shape()) + " / " + to_string(values[l].shape()));
  }
}

template <class T>
KVPrefixVars<T> KVPrefixVars<T>::constant(ad::Graph<T>& g, const KVPrefix& prefix) {
  KVPrefixVars<T> out;
  for (std::size_t l = 0; l < prefix.layers(); ++l) {
    if constexpr (std::is_same_v<T, float>) {
      out.keys.push_back(g.constant(prefix.keys[l]));
      out.values.push_back(g.constant(prefix.values[l]));
    } else {
      out.keys.push_back(g.constant(prefix.keys[l].template cast<T>()));
      out.values.push_back(g.constant(prefix.values[l].template cast<T>()));
    }
  }
  return out;
}

template <class T>
KVPrefix KVPrefixVars<T>::to_tensors() const {
  KVPrefix out;
  for (std::size_t l = 0; l < keys.size(); ++l) {
    out.keys.push_back(keys[l].value().template cast<float>());
    out.values.push_back(values[l].value().template cast<float>());
  }
  return out;
}

LMParams::LMParams(const ModelConfig& c) : cfg(c) {
  cfg.validate();
  if (cfg.vocab_size <= 0) throw ConfigError("vocab_size must be set before building the LM");
  const std::size_t v = cfg.vocab_size, d = cfg.d_model;
  tok_emb = Parameter("lm.tok_emb", {v, d});
  stack = DecoderStack("lm", cfg.n_layers, cfg);
  lm_head = Parameter("lm.head", {d, v});
}

void LMParams::init(std::mt19937_64& rng) {
  init_normal(tok_emb, rng, cfg.init_std * 4.0);
  stack.init(rng, cfg);
  init_normal(lm_head, rng, cfg.init_std);
}

ParamList LMParams::params() {
  ParamList out{&tok_emb};
  stack.collect(out);
  out.push_back(&lm_head);
  return out;
}

void LMParams::set_frozen(bool frozen) {
  for (Parameter* p : params()) p->requires_grad = !frozen;
}

std::vector<float> rope_rotate(std::span<const float> x, std::size_t head_dim, std::size_t pos, double base) {
  if (head_dim == 0 || head_dim % 2 != 0 || x.size() % head_dim != 0)
    throw ConfigError("rope_rotate: head dimension must be even and divide the vector width");
  std::vector<float> out(x.begin(), x.end());
  ad::rope_apply(out.data(), out.size(), head_dim, static_cast<double>(pos), base, false);
  return out;
}

template <class T>
ad::Var<T> decoder_forward(ad::Graph<T>& g, DecoderStack& stack, ad::Var<T> x, const KVPrefixVars<T>* prefix,
                           const ModelConfig& cfg) {
  const std::size_t p = prefix ? prefix->length() : 0;
  const std::size_t n = x.rows();
  const std::size_t hd = static_cast<std::size_t>(cfg.head_dim());
  const T eps = static_cast<T>(cfg.norm_eps);
  if (prefix && prefix->keys.size() != stack.layers.size())
    throw ShapeError("kv prefix has " + std::to_string(prefix->keys.size()) + " layers, stack has " +
                     std::to_string(stack.layers.size()));
  const auto tok_pos = iota_positions(p, n);
  const auto prefix_pos = iota_positions(0, p);
  for (std::size_t l = 0; l < stack.layers.size(); ++l) {
    auto& layer = stack.layers[l];
    auto h = ad::rms_norm_rows(x, g.param(layer.attn_norm), eps);
    auto q = ad::rope(ad::matmul(h, g.param(layer.wq)), tok_pos, hd, cfg.rope_base);
    auto k = ad::rope(ad::matmul(h, g.param(layer.wk)), tok_pos, hd, cfg.rope_base);
    auto v = ad::matmul(h, g.param(layer.wv));
    if (p > 0) {
      k = ad::concat_rows<T>({ad::rope(prefix->keys[l], prefix_pos, hd, cfg.rope_base), k});
      v = ad::concat_rows<T>({prefix->values[l], v});
    }
    auto att = multi_head_attention(q, k, v, static_cast<std::size_t>(cfg.n_heads), p);
    x = ad::add(x, ad::matmul(att, g.param(layer.wo)));
    auto m = ad::rms_norm_rows(x, g.param(layer.mlp_norm), eps);
    x = ad::add(x, ad::matmul(ad::silu(ad::matmul(m, g.param(layer.w_up))), g.param(layer.w_down)));
  }
  return ad::rms_norm_rows(x, g.param(stack.final_norm), eps);
}

template <class T>
ad::Var<T> lm_forward(ad::Graph<T>& g, LMParams& lm, const std::vector<int>& tokens, const KVPrefixVars<T>* prefix) {
  if (prefix && prefix->keys.size() != static_cast<std::size_t>(lm.cfg.n_layers))
    throw ShapeError("kv prefix has " + std::to_string(prefix->keys.size()) + " layers, LM has " +
                     std::to_string(lm.cfg.n_layers));
  if (prefix && prefix->length() == 0) prefix = nullptr;
  auto x = ad::embedding(g.param(lm.tok_emb), tokens);
  auto h = decoder_forward(g, lm.stack, x, prefix, lm.cfg);
  return ad::matmul(h, g.param(lm.lm_head));
}

std::size_t argmax(std::span<const float> values) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i)
    if (values[i] > values[best]) best = i;
  return best;
}

std::vector<int> generate_greedy(LMParams& lm, const std::vector<int>& prompt, const KVPrefix* prefix,
                                 const GenerateOptions& opts) {
  if (opts.max_new < 1) throw InvalidArgument("generate_greedy: max_new must be >= 1");
  if (prefix) prefix->validate(lm.cfg);
  std::vector<int> seq = prompt;
  std::vector<int> out;
  for (int step = 0; step < opts.max_new; ++step) {
    ad::Graph<float> g(false);
    KVPrefixVars<float> pv;
    if (prefix) pv = KVPrefixVars<float>::constant(g, *prefix);
    auto logits = lm_forward(g, lm, seq, prefix ? &pv : nullptr);
    const auto& lv = logits.value();
    std::vector<float> last(lv.row(lv.rows() - 1).begin(), lv.row(lv.rows() - 1).end());
    if (opts.memory_aware_alpha && prefix && prefix->length() > 0) {
      const float a = static_cast<float>(*opts.memory_aware_alpha);
      auto plain = lm_forward<float>(g, lm, seq, nullptr);
      const auto& pl = plain.value();
      const auto prow = pl.row(pl.rows() - 1);
      for (std::size_t i = 0; i < last.size(); ++i) last[i] += a * (last[i] - prow[i]);
    }
    const int next = static_cast<int>(argmax(last));
    if (next == opts.stop_token) break;
    out.push_back(next);
    seq.push_back(next);
  }
  return out;
}

template struct KVPrefixVars<float>;
template struct KVPrefixVars<double>;
template ad::Var<float> decoder_forward(ad::Graph<float>&, DecoderStack&, ad::Var<float>, const KVPrefixVars<float>*,
                                        const ModelConfig&);
template ad::Var<double> decoder_forward(ad::Graph<double>&, DecoderStack&, ad::Var<double>,
                                         const KVPrefixVars<double>*, const ModelConfig&);
template ad::Var<float> lm_forward(ad::Graph<float>&, LMParams&, const std::vector<int>&, const KVPrefixVars<float>*);
template ad::Var<double> lm_forward(ad::Graph<double>&, LMParams&, const std::vector<int>&,
                                    const KVPrefixVars<double>*);

}  // namespace cmt
