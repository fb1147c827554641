#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/parameter.hpp"

namespace cmt {

// Fills a weight with N(0, std^2) draws; gains get `ones`.
void init_normal(Parameter& p, std::mt19937_64& rng, double stddev);
void init_constant(Parameter& p, float v);

// Multi-head scaled dot-product attention over already projected (and, where
// applicable, rotated) queries [m x d], keys [n x d] and values [n x d].
// Heads are contiguous column blocks of width d / heads.
template <class T>
ad::Var<T> multi_head_attention(ad::Var<T> q, ad::Var<T> k, ad::Var<T> v, std::size_t heads,
                                std::optional<std::size_t> causal_offset = std::nullopt) {
  const std::size_t d = q.cols();
  const std::size_t hd = d / heads;
  const T inv_sqrt = T{1} / static_cast<T>(std::sqrt(static_cast<double>(hd)));
  if (heads == 1) {
    auto scores = ad::scale(ad::matmul_nt(q, k), inv_sqrt);
    return ad::matmul(ad::softmax_rows(scores, causal_offset), v);
  }
  std::vector<ad::Var<T>> outs;
  outs.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    auto qh = ad::slice_cols(q, h * hd, (h + 1) * hd);
    auto kh = ad::slice_cols(k, h * hd, (h + 1) * hd);
    auto vh = ad::slice_cols(v, h * hd, (h + 1) * hd);
    auto scores = ad::scale(ad::matmul_nt(qh, kh), inv_sqrt);
    outs.push_back(ad::matmul(ad::softmax_rows(scores, causal_offset), vh));
  }
  return ad::concat_cols(outs);
}

// Positions first, first+1, ..., first+count-1.
inline std::vector<std::size_t> iota_positions(std::size_t first, std::size_t count) {
  std::vector<std::size_t> p(count);
  for (std::size_t i = 0; i < count; ++i) p[i] = first + i;
  return p;
}

}  // namespace cmt
