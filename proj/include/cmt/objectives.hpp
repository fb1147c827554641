#pragma once

#include <cstdint>
#include <vector>

#include "cmt/autodiff.hpp"

namespace cmt {

struct LossBreakdown {
  double nll = 0;
  double self_match = 0;
  double uniformity = 0;
  double total = 0;
  double lambda_sm = 0;
  double lambda_u = 0;
};

// Mean NLL over answer positions; `answer_mask` marks the rows of `logits`
// whose next-token target counts. Throws on an empty mask.
template <class T>
ad::Var<T> nll_loss(ad::Var<T> logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& answer_mask);

// (1 + alpha) * logits_mem - alpha * logits_plain, with logits_plain detached.
template <class T>
ad::Var<T> memory_aware_adjust(ad::Var<T> logits_mem, ad::Var<T> logits_plain, T alpha);

// Plain-tensor form of the same rule.
Tensor<float> memory_aware_adjust(const Tensor<float>& logits_mem, const Tensor<float>& logits_plain, float alpha);

// 1 - cos(query_pooled, bank_pooled[target_index]).
template <class T>
ad::Var<T> self_matching_loss(ad::Var<T> query_pooled, const std::vector<ad::Var<T>>& bank_pooled,
                              std::size_t target_index);

// log of the mean over distinct pairs of exp(2 cos(m_i, m_j)); 0 for fewer
// than two vectors.
template <class T>
ad::Var<T> uniformity_loss(ad::Graph<T>& g, const std::vector<ad::Var<T>>& bank_pooled);

}  // namespace cmt
