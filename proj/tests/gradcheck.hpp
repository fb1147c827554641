#pragma once

// Finite-difference gradient checking. The analytic gradient comes from the
// f32 graph; the numeric one from central differences on an f64 graph with
// the perturbed parameter substituted via override_param.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "cmt/autodiff.hpp"
#include "cmt/parameter.hpp"

namespace cmt::testing {

constexpr double kFdStep = 1e-3;
constexpr double kRelFloor = 1e-3;

inline double rel_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kRelFloor});
}

struct GradCheck {
  double max_rel = 0;
  std::string worst;
  std::size_t checked = 0;
  std::size_t nonzero = 0;
};

// `build` is a generic callable (auto& graph) -> scalar Var. Every entry of
// parameters with at most `full_below` elements is checked; larger ones get
// `samples` random entries plus their `top` largest analytic gradients.
template <class Build>
GradCheck grad_check(const ParamList& params, Build&& build, std::uint64_t seed, std::size_t samples = 12,
                     std::size_t top = 4, std::size_t full_below = 64) {
  for (Parameter* p : params) p->zero_grad();
  {
    ad::Graph<float> g(true);
    auto loss = build(g);
    g.backward(loss);
  }
  std::mt19937_64 rng(seed);
  GradCheck out;
  for (Parameter* p : params) {
    if (!p->requires_grad) continue;
    const std::size_t n = p->value.size();
    std::vector<std::size_t> idx;
    if (n <= full_below) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      std::uniform_int_distribution<std::size_t> pick(0, n - 1);
      for (std::size_t s = 0; s < samples; ++s) idx.push_back(pick(rng));
      std::vector<std::size_t> order(n);
      for (std::size_t i = 0; i < n; ++i) order[i] = i;
      std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(top, n)), order.end(),
                        [&](std::size_t a, std::size_t b) { return std::abs(p->grad[a]) > std::abs(p->grad[b]); });
      idx.insert(idx.end(), order.begin(), order.begin() + static_cast<std::ptrdiff_t>(std::min(top, n)));
    }
    const Tensor<double> base = p->value.template cast<double>();
    for (std::size_t i : idx) {
      auto eval = [&](double delta) {
        Tensor<double> v = base;
        v[i] += delta;
        ad::Graph<double> g(false);
        g.override_param(*p, std::move(v));
        return build(g).value()[0];
      };
      const double numeric = (eval(kFdStep) - eval(-kFdStep)) / (2 * kFdStep);
      const double analytic = p->grad[i];
      const double err = rel_error(analytic, numeric);
      ++out.checked;
      if (analytic != 0.0) ++out.nonzero;
      if (err > out.max_rel) {
        out.max_rel = err;
        out.worst = p->name + "[" + std::to_string(i) + "] analytic " + std::to_string(analytic) + " numeric " +
                    std::to_string(numeric);
      }
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return out;
}

// A fixed random projection turning any tensor output into a scalar loss, so
// every output entry contributes with a distinct weight.
template <class T>
ad::Var<T> project(ad::Graph<T>& g, ad::Var<T> x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor<T> w(x.shape());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = static_cast<T>(n(rng));
  return ad::sum(ad::mul(x, g.constant(std::move(w))));
}

inline Parameter random_param(const std::string& name, Shape shape, std::mt19937_64& rng, double scale = 1.0,
                              double shift = 0.0) {
  Parameter p;
  p.name = name;
  p.value = Tensor<float>(shape);
  std::normal_distribution<double> n(shift, scale);
  for (std::size_t i = 0; i < p.value.size(); ++i) p.value[i] = static_cast<float>(n(rng));
  p.zero_grad();
  return p;
}

}  // namespace cmt::testing
