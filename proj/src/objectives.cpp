#include "cmt/objectives.hpp"

namespace cmt {

template <class T>
ad::Var<T> nll_loss(ad::Var<T> logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& answer_mask) {
  return ad::cross_entropy(logits, targets, answer_mask);
}

template <class T>
ad::Var<T> memory_aware_adjust(ad::Var<T> logits_mem, ad::Var<T> logits_plain, T alpha) {
  if (logits_mem.shape() != logits_plain.shape())
    throw ShapeError("memory_aware_adjust: logits shapes " + to_string(logits_mem.shape()) + " and " +
                     to_string(logits_plain.shape()) + " differ");
  if (alpha < T{0}) throw InvalidArgument("memory_aware_adjust: alpha must be >= 0");
  if (alpha == T{0}) return logits_mem;
  // m + alpha (m - p): equal to (1 + alpha) m - alpha p, and exactly m when p == m.
  return ad::add(logits_mem, ad::scale(ad::sub(logits_mem, ad::detach(logits_plain)), alpha));
}

Tensor<float> memory_aware_adjust(const Tensor<float>& logits_mem, const Tensor<float>& logits_plain, float alpha) {
  if (logits_mem.shape() != logits_plain.shape())
    throw ShapeError("memory_aware_adjust: logits shapes " + to_string(logits_mem.shape()) + " and " +
                     to_string(logits_plain.shape()) + " differ");
  if (alpha < 0.0f) throw InvalidArgument("memory_aware_adjust: alpha must be >= 0");
  Tensor<float> out = logits_mem;
  if (alpha == 0.0f) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = logits_mem[i] + alpha * (logits_mem[i] - logits_plain[i]);
  return out;
}

template <class T>
ad::Var<T> self_matching_loss(ad::Var<T> query_pooled, const std::vector<ad::Var<T>>& bank_pooled,
                              std::size_t target_index) {
  if (target_index >= bank_pooled.size())
    throw InvalidArgument("self_matching_loss: target index " + std::to_string(target_index) + " out of range " +
                          std::to_string(bank_pooled.size()));
  auto c = ad::cosine(query_pooled, bank_pooled[target_index]);
  return ad::add_scalar(ad::scale(c, T{-1}), T{1});
}

template <class T>
ad::Var<T> uniformity_loss(ad::Graph<T>& g, const std::vector<ad::Var<T>>& bank_pooled) {
  if (bank_pooled.size() < 2) return g.constant(Tensor<T>::scalar(T{0}));
  std::vector<ad::Var<T>> terms;
  for (std::size_t i = 0; i < bank_pooled.size(); ++i)
    for (std::size_t j = i + 1; j < bank_pooled.size(); ++j)
      terms.push_back(ad::exp(ad::scale(ad::cosine(bank_pooled[i], bank_pooled[j]), T{2})));
  // Unordered pairs give the same mean as ordered pairs i != j.
  return ad::log(ad::mean(ad::concat_rows(terms)));
}

template ad::Var<float> nll_loss(ad::Var<float>, const std::vector<int>&, const std::vector<std::uint8_t>&);
template ad::Var<double> nll_loss(ad::Var<double>, const std::vector<int>&, const std::vector<std::uint8_t>&);
template ad::Var<float> memory_aware_adjust(ad::Var<float>, ad::Var<float>, float);
template ad::Var<double> memory_aware_adjust(ad::Var<double>, ad::Var<double>, double);
template ad::Var<float> self_matching_loss(ad::Var<float>, const std::vector<ad::Var<float>>&, std::size_t);
template ad::Var<double> self_matching_loss(ad::Var<double>, const std::vector<ad::Var<double>>&, std::size_t);
template ad::Var<float> uniformity_loss(ad::Graph<float>&, const std::vector<ad::Var<float>>&);
template ad::Var<double> uniformity_loss(ad::Graph<double>&, const std::vector<ad::Var<double>>&);

}  // namespace cmt
