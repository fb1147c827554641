#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/config.hpp"
#include "cmt/parameter.hpp"

namespace cmt {

struct DecoderLayer {
  Parameter attn_norm;
  Parameter wq, wk, wv, wo;
  Parameter mlp_norm;
  Parameter w_up, w_down;
};

// Pre-norm causal decoder blocks with rotary attention and a SiLU MLP,
// followed by a final rms-norm. Used by the base LM and by the compressor.
struct DecoderStack {
  std::vector<DecoderLayer> layers;
  Parameter final_norm;

  DecoderStack() = default;
  DecoderStack(const std::string& prefix, int n_layers, const ModelConfig& cfg);
  void init(std::mt19937_64& rng, const ModelConfig& cfg);
  void collect(ParamList& out);
};

// Key/value blocks prepended to every attention layer's cache. keys[l] and
// values[l] are [p x d] with head h occupying columns [h*d_h, (h+1)*d_h).
// Prefix keys are unrotated; the LM rotates them to positions 0..p-1.
struct KVPrefix {
  std::vector<Tensor<float>> keys;
  std::vector<Tensor<float>> values;

  std::size_t layers() const { return keys.size(); }
  std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
  static KVPrefix empty(const ModelConfig& cfg);
  // Throws ShapeError unless there are cfg.n_layers uniform [p x d] blocks.
  void validate(const ModelConfig& cfg) const;
};

// Graph-resident form of a KVPrefix.
template <class T>
struct KVPrefixVars {
  std::vector<ad::Var<T>> keys;
  std::vector<ad::Var<T>> values;

  std::size_t length() const { return keys.empty() ? 0 : keys.front().rows(); }
  static KVPrefixVars constant(ad::Graph<T>& g, const KVPrefix& prefix);
  KVPrefix to_tensors() const;
};

// The frozen base language model.
struct LMParams {
  ModelConfig cfg;
  Parameter tok_emb;  // V x d
  DecoderStack stack;
  Parameter lm_head;  // d x V

  LMParams() = default;
  explicit LMParams(const ModelConfig& cfg);
  void init(std::mt19937_64& rng);
  ParamList params();
  void set_frozen(bool frozen);
};

// Rotates one vector made of head_dim-wide heads to position `pos`.
std::vector<float> rope_rotate(std::span<const float> x, std::size_t head_dim, std::size_t pos, double base = 10000.0);

// Hidden states [T x d] of the stack over input embeddings x [T x d]. Inputs
// occupy positions p..p+T-1 where p is the prefix length (0 without prefix).
template <class T>
ad::Var<T> decoder_forward(ad::Graph<T>& g, DecoderStack& stack, ad::Var<T> x, const KVPrefixVars<T>* prefix,
                           const ModelConfig& cfg);

// Logits [T x V]. A prefix with p == 0 takes exactly the prefix-free path.
template <class T>
ad::Var<T> lm_forward(ad::Graph<T>& g, LMParams& lm, const std::vector<int>& tokens, const KVPrefixVars<T>* prefix);

struct GenerateOptions {
  int max_new = 8;
  int stop_token = 2;
  // When set, decode from (1+alpha)*logits_with_prefix - alpha*logits_without.
  std::optional<double> memory_aware_alpha;
};

// Greedy decoding; ties resolve to the lowest token id. The stop token is not
// included in the result.
std::vector<int> generate_greedy(LMParams& lm, const std::vector<int>& prompt, const KVPrefix* prefix,
                                 const GenerateOptions& opts);

// Index of the maximum, lowest index on ties.
std::size_t argmax(std::span<const float> values);

}  // namespace cmt
