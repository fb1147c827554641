#pragma once

// Define-by-run reverse-mode autodiff over small dense tensors.
//
// A Graph<T> is a tape: every op appends a node holding its output value and a
// backward closure. Node ids are assigned in creation order, so reverse id
// order is a valid reverse topological order. Graph<float> is the execution
// path; Graph<double> exists for finite-difference gradient checks.

#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "cmt/error.hpp"
#include "cmt/parameter.hpp"
#include "cmt/tensor.hpp"

namespace cmt::ad {

template <class T>
class Graph;

template <class T>
struct Var {
  Graph<T>* graph = nullptr;
  std::size_t id = 0;

  const Tensor<T>& value() const { return graph->value(*this); }
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

template <class T>
class Graph {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(Graph&, std::size_t)>;

  explicit Graph(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool grad_enabled() const { return grad_enabled_; }
  std::size_t size() const { return nodes_.size(); }
  // Number of nodes that recorded a backward closure; zero on a no-grad graph.
  std::size_t backward_closures() const {
    std::size_t n = 0;
    for (const auto& node : nodes_) n += node.backward ? 1 : 0;
    return n;
  }

  Var<T> constant(Tensor<T> value) { return push("constant", std::move(value), false, {}); }

  Var<T> input(Tensor<T> value, bool requires_grad) {
    return push("input", std::move(value), requires_grad && grad_enabled_, {});
  }

  // Binds a parameter as a leaf. Binding the same parameter twice yields the
  // same node, so gradient accumulation across uses happens on one buffer.
  Var<T> param(Parameter& p) {
    if (auto it = bound_.find(&p); it != bound_.end()) return Var<T>{this, it->second};
    Tensor<T> v;
    if (auto it = overrides_.find(&p); it != overrides_.end()) {
      v = it->second;
    } else if constexpr (std::is_same_v<T, float>) {
      v = p.value;
    } else {
      v = p.value.template cast<T>();
    }
    Var<T> var = push("param:" + p.name, std::move(v), p.requires_grad && grad_enabled_, {});
    bound_.emplace(&p, var.id);
    bound_order_.push_back({&p, var.id});
    return var;
  }

  // Substitutes the value a parameter binds to. Used by gradient checks to
  // perturb parameters in 64-bit without touching the f32 master copy.
  void override_param(const Parameter& p, Tensor<T> value) {
    if (value.shape() != p.value.shape()) {
      throw ShapeError("override for " + p.name + ": expected " + to_string(p.value.shape()) +
                       ", got " + to_string(value.shape()));
    }
    overrides_[&p] = std::move(value);
  }

  const Tensor<T>& value(Var<T> v) const { return nodes_.at(v.id).value; }
  const std::string& op(std::size_t id) const { return nodes_.at(id).op; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id).requires_grad; }

  // Gradient of the last backward() with respect to `v`; zeros if unreached.
  Tensor<T> grad(Var<T> v) const {
    const auto& node = nodes_.at(v.id);
    return node.grad.empty() && !node.value.empty() ? Tensor<T>(node.value.shape()) : node.grad;
  }

  // Mutable gradient accumulator, allocated on first use. For op backward
  // closures.
  Tensor<T>& grad_acc(std::size_t id) {
    auto& node = nodes_[id];
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }
  const Tensor<T>& out_grad(std::size_t id) const { return nodes_[id].grad; }

  // Reverse pass from a scalar loss. Accumulates into the f32 grad buffers of
  // every bound parameter that requires grad (unreached ones receive zeros).
  void backward(Var<T> loss) {
    if (!grad_enabled_) throw Error("autodiff", "backward called on a no-grad graph");
    const auto& lv = value(loss);
    if (lv.size() != 1) {
      throw ShapeError("backward: loss node " + std::to_string(loss.id) + " (" + op(loss.id) +
                       ") must be scalar, got shape " + to_string(lv.shape()));
    }
    for (auto& node : nodes_) node.grad = Tensor<T>();
    grad_acc(loss.id)[0] = T{1};
    for (std::size_t id = loss.id + 1; id-- > 0;) {
      auto& node = nodes_[id];
      if (node.backward && !node.grad.empty()) node.backward(*this, id);
    }
    for (auto [p, id] : bound_order_) {
      if (!p->requires_grad) continue;
      if (p->grad.shape() != p->value.shape()) p->zero_grad();
      const auto& g = nodes_[id].grad;
      if (g.empty()) continue;
      for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += static_cast<float>(g[i]);
    }
  }

  Var<T> push(std::string op, Tensor<T> value, bool requires_grad, BackwardFn fn) {
    Node node;
    node.op = std::move(op);
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad && grad_enabled_) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var<T>{this, nodes_.size() - 1};
  }

 private:
  struct Node {
    std::string op;
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> bound_;
  std::vector<std::pair<Parameter*, std::size_t>> bound_order_;
  std::unordered_map<const Parameter*, Tensor<T>> overrides_;
};

namespace detail {

template <class T>
[[noreturn]] void shape_error(const Graph<T>& g, const std::string& op, const std::string& expected,
                              const Shape& actual) {
  throw ShapeError("node " + std::to_string(g.size()) + " (" + op + "): expected " + expected +
                   ", got " + to_string(actual));
}

template <class T>
bool any_grad(const Graph<T>& g, std::initializer_list<Var<T>> vs) {
  for (auto v : vs)
    if (g.requires_grad(v)) return true;
  return false;
}

// c[m x n] += a[m x k] * b[k x n]
template <class T>
void gemm_nn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = a[i * k + p];
      const T* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// c[m x n] += a[m x k] * b[n x k]^T
template <class T>
void gemm_nt(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = b + j * k;
      T s{0};
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c[i * n + j] += s;
    }
  }
}

// c[m x n] += a[k x m]^T * b[k x n]
template <class T>
void gemm_tn(const T* a, const T* b, T* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const T* arow = a + p * m;
    const T* brow = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = arow[i];
      T* crow = c + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

}  // namespace detail

// ---- linear algebra -------------------------------------------------------

template <class T>
Var<T> matmul(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    detail::shape_error(g, "matmul", "[m x " + std::to_string(av.cols()) + "] rhs",
                        bv.shape());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.cols();
  Tensor<T> out({m, n});
  detail::gemm_nn(av.data(), bv.data(), out.data(), m, k, n);
  return g.push("matmul", std::move(out), detail::any_grad(g, {a, b}),
                [a, b, m, k, n](Graph<T>& g, std::size_t self) {
                  const auto& gc = g.out_grad(self);
                  if (g.requires_grad(a))
                    detail::gemm_nt(gc.data(), g.value(b).data(), g.grad_acc(a.id).data(), m, n, k);
                  if (g.requires_grad(b))
                    detail::gemm_tn(g.value(a).data(), gc.data(), g.grad_acc(b.id).data(), k, m, n);
                });
}

// a * b^T, the attention-score form.
template <class T>
Var<T> matmul_nt(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.cols()) {
    detail::shape_error(g, "matmul_nt", "[n x " + std::to_string(av.cols()) + "] rhs", bv.shape());
  }
  const std::size_t m = av.rows(), k = av.cols(), n = bv.rows();
  Tensor<T> out({m, n});
  detail::gemm_nt(av.data(), bv.data(), out.data(), m, k, n);
  return g.push("matmul_nt", std::move(out), detail::any_grad(g, {a, b}),
                [a, b, m, k, n](Graph<T>& g, std::size_t self) {
                  const auto& gc = g.out_grad(self);
                  if (g.requires_grad(a))
                    detail::gemm_nn(gc.data(), g.value(b).data(), g.grad_acc(a.id).data(), m, n, k);
                  if (g.requires_grad(b))
                    detail::gemm_tn(gc.data(), g.value(a).data(), g.grad_acc(b.id).data(), n, m, k);
                });
}

template <class T>
Var<T> transpose(Var<T> a) {
  auto& g = *a.graph;
  const auto& av = a.value();
  if (av.rank() != 2) detail::shape_error(g, "transpose", "rank 2", av.shape());
  const std::size_t m = av.rows(), n = av.cols();
  Tensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = av.at(i, j);
  return g.push("transpose", std::move(out), g.requires_grad(a), [a, m, n](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += gc.at(j, i);
  });
}

// ---- elementwise ----------------------------------------------------------

template <class T>
Var<T> add(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  if (a.shape() != b.shape()) detail::shape_error(g, "add", to_string(a.shape()), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return g.push("add", std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    for (auto v : {a, b}) {
      if (!g.requires_grad(v)) continue;
      auto& gv = g.grad_acc(v.id);
      for (std::size_t i = 0; i < gc.size(); ++i) gv[i] += gc[i];
    }
  });
}

template <class T>
Var<T> sub(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  if (a.shape() != b.shape()) detail::shape_error(g, "sub", to_string(a.shape()), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= bv[i];
  return g.push("sub", std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    if (g.requires_grad(a)) {
      auto& ga = g.grad_acc(a.id);
      for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad_acc(b.id);
      for (std::size_t i = 0; i < gc.size(); ++i) gb[i] -= gc[i];
    }
  });
}

template <class T>
Var<T> mul(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  if (a.shape() != b.shape()) detail::shape_error(g, "mul", to_string(a.shape()), b.shape());
  Tensor<T> out = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return g.push("mul", std::move(out), detail::any_grad(g, {a, b}), [a, b](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    if (g.requires_grad(a)) {
      auto& ga = g.grad_acc(a.id);
      const auto& bv = g.value(b);
      for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * bv[i];
    }
    if (g.requires_grad(b)) {
      auto& gb = g.grad_acc(b.id);
      const auto& av = g.value(a);
      for (std::size_t i = 0; i < gc.size(); ++i) gb[i] += gc[i] * av[i];
    }
  });
}

// a[m x n] + bias[n] broadcast over rows.
template <class T>
Var<T> add_bias(Var<T> a, Var<T> bias) {
  auto& g = *a.graph;
  const std::size_t m = a.rows(), n = a.cols();
  if (bias.value().size() != n) detail::shape_error(g, "add_bias", "[" + std::to_string(n) + "]", bias.shape());
  Tensor<T> out = a.value();
  const auto& bv = bias.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bv[j];
  return g.push("add_bias", std::move(out), detail::any_grad(g, {a, bias}),
                [a, bias, m, n](Graph<T>& g, std::size_t self) {
                  const auto& gc = g.out_grad(self);
                  if (g.requires_grad(a)) {
                    auto& ga = g.grad_acc(a.id);
                    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
                  }
                  if (g.requires_grad(bias)) {
                    auto& gb = g.grad_acc(bias.id);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gb[j] += gc.at(i, j);
                  }
                });
}

template <class T>
Var<T> scale(Var<T> a, T s) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& x : out.vec()) x *= s;
  return g.push("scale", std::move(out), g.requires_grad(a), [a, s](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * s;
  });
}

template <class T>
Var<T> add_scalar(Var<T> a, T s) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& x : out.vec()) x += s;
  return g.push("add_scalar", std::move(out), g.requires_grad(a), [a](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i];
  });
}

template <class T>
Var<T> exp(Var<T> a) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& x : out.vec()) x = std::exp(x);
  return g.push("exp", std::move(out), g.requires_grad(a), [a](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    const auto& y = g.value(Var<T>{&g, self});
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] * y[i];
  });
}

template <class T>
Var<T> log(Var<T> a) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& x : out.vec()) {
    // NaN passes through so non-finite loss checks can report it.
    if (x <= T{0}) detail::shape_error(g, "log", "strictly positive input", a.shape());
    x = std::log(x);
  }
  return g.push("log", std::move(out), g.requires_grad(a), [a](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    const auto& x = g.value(a);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[i] += gc[i] / x[i];
  });
}

// x * sigmoid(x)
template <class T>
Var<T> silu(Var<T> a) {
  auto& g = *a.graph;
  Tensor<T> out = a.value();
  for (auto& x : out.vec()) x = x / (T{1} + std::exp(-x));
  return g.push("silu", std::move(out), g.requires_grad(a), [a](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    const auto& xv = g.value(a);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) {
      const T s = T{1} / (T{1} + std::exp(-xv[i]));
      ga[i] += gc[i] * (s + xv[i] * s * (T{1} - s));
    }
  });
}

// Gradient-blocking copy.
template <class T>
Var<T> detach(Var<T> a) {
  return a.graph->constant(a.value());
}

// ---- reductions -----------------------------------------------------------

template <class T>
Var<T> sum(Var<T> a) {
  auto& g = *a.graph;
  T s{0};
  for (auto x : a.value().vec()) s += x;
  return g.push("sum", Tensor<T>::scalar(s), g.requires_grad(a), [a](Graph<T>& g, std::size_t self) {
    const T gc = g.out_grad(self)[0];
    for (auto& x : g.grad_acc(a.id).vec()) x += gc;
  });
}

template <class T>
Var<T> mean(Var<T> a) {
  return scale(sum(a), T{1} / static_cast<T>(a.value().size()));
}

// Column means of a [m x n] tensor, as [1 x n].
template <class T>
Var<T> mean_rows(Var<T> a) {
  auto& g = *a.graph;
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) detail::shape_error(g, "mean_rows", "at least one row", a.shape());
  Tensor<T> out({1, n});
  const auto& av = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += av.at(i, j);
  for (auto& x : out.vec()) x /= static_cast<T>(m);
  return g.push("mean_rows", std::move(out), g.requires_grad(a), [a, m, n](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += gc[j] / static_cast<T>(m);
  });
}

// ---- shape manipulation ---------------------------------------------------

template <class T>
Var<T> slice_rows(Var<T> a, std::size_t r0, std::size_t r1) {
  auto& g = *a.graph;
  if (r0 > r1 || r1 > a.rows()) {
    detail::shape_error(g, "slice_rows", "rows [" + std::to_string(r0) + "," + std::to_string(r1) + ")",
                        a.shape());
  }
  const std::size_t n = a.cols();
  const auto& av = a.value();
  Tensor<T> out({r1 - r0, n}, std::vector<T>(av.vec().begin() + r0 * n, av.vec().begin() + r1 * n));
  return g.push("slice_rows", std::move(out), g.requires_grad(a), [a, r0, n](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < gc.size(); ++i) ga[r0 * n + i] += gc[i];
  });
}

template <class T>
Var<T> slice_cols(Var<T> a, std::size_t c0, std::size_t c1) {
  auto& g = *a.graph;
  const std::size_t m = a.rows(), n = a.cols();
  if (c0 > c1 || c1 > n) {
    detail::shape_error(g, "slice_cols", "cols [" + std::to_string(c0) + "," + std::to_string(c1) + ")",
                        a.shape());
  }
  const std::size_t w = c1 - c0;
  Tensor<T> out({m, w});
  const auto& av = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < w; ++j) out.at(i, j) = av.at(i, c0 + j);
  return g.push("slice_cols", std::move(out), g.requires_grad(a), [a, c0, m, w](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) ga.at(i, c0 + j) += gc.at(i, j);
  });
}

template <class T>
Var<T> concat_rows(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  auto& g = *parts.front().graph;
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  bool needs_grad = false;
  for (auto p : parts) {
    if (p.cols() != n) detail::shape_error(g, "concat_rows", "[* x " + std::to_string(n) + "]", p.shape());
    m += p.rows();
    needs_grad = needs_grad || g.requires_grad(p);
  }
  Tensor<T> out({m, n});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& pv = p.value();
    std::copy(pv.vec().begin(), pv.vec().end(), out.vec().begin() + off);
    off += pv.size();
  }
  return g.push("concat_rows", std::move(out), needs_grad, [parts](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t len = g.value(p).size();
      if (g.requires_grad(p)) {
        auto& gp = g.grad_acc(p.id);
        for (std::size_t i = 0; i < len; ++i) gp[i] += gc[off + i];
      }
      off += len;
    }
  });
}

template <class T>
Var<T> concat_cols(const std::vector<Var<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  auto& g = *parts.front().graph;
  const std::size_t m = parts.front().rows();
  std::size_t n = 0;
  bool needs_grad = false;
  for (auto p : parts) {
    if (p.rows() != m) detail::shape_error(g, "concat_cols", "[" + std::to_string(m) + " x *]", p.shape());
    n += p.cols();
    needs_grad = needs_grad || g.requires_grad(p);
  }
  Tensor<T> out({m, n});
  std::size_t off = 0;
  for (auto p : parts) {
    const auto& pv = p.value();
    const std::size_t w = pv.cols();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < w; ++j) out.at(i, off + j) = pv.at(i, j);
    off += w;
  }
  return g.push("concat_cols", std::move(out), needs_grad, [parts, m](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    std::size_t off = 0;
    for (auto p : parts) {
      const std::size_t w = g.value(p).cols();
      if (g.requires_grad(p)) {
        auto& gp = g.grad_acc(p.id);
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < w; ++j) gp.at(i, j) += gc.at(i, off + j);
      }
      off += w;
    }
  });
}

// Row r of the output is row (r mod m) of the input.
template <class T>
Var<T> tile_rows(Var<T> a, std::size_t out_rows) {
  auto& g = *a.graph;
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) detail::shape_error(g, "tile_rows", "at least one row", a.shape());
  Tensor<T> out({out_rows, n});
  const auto& av = a.value();
  for (std::size_t r = 0; r < out_rows; ++r)
    for (std::size_t j = 0; j < n; ++j) out.at(r, j) = av.at(r % m, j);
  return g.push("tile_rows", std::move(out), g.requires_grad(a), [a, m, n, out_rows](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& ga = g.grad_acc(a.id);
    for (std::size_t r = 0; r < out_rows; ++r)
      for (std::size_t j = 0; j < n; ++j) ga.at(r % m, j) += gc.at(r, j);
  });
}

// Rows of `table` selected by `ids`.
template <class T>
Var<T> embedding(Var<T> table, const std::vector<int>& ids) {
  auto& g = *table.graph;
  const std::size_t vocab = table.rows(), n = table.cols();
  Tensor<T> out({ids.size(), n});
  const auto& tv = table.value();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      detail::shape_error(g, "embedding", "token id < " + std::to_string(vocab) + " (got " + std::to_string(ids[i]) + ")",
                          table.shape());
    }
    std::copy_n(tv.row(ids[i]).begin(), n, out.row(i).begin());
  }
  return g.push("embedding", std::move(out), g.requires_grad(table), [table, ids, n](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    auto& gt = g.grad_acc(table.id);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t j = 0; j < n; ++j) gt.at(ids[i], j) += gc.at(i, j);
  });
}

// ---- normalization / attention primitives ----------------------------------

// Row-wise softmax. With `causal_offset` set, row t may only see columns
// j <= t + causal_offset; masked entries are exactly zero.
template <class T>
Var<T> softmax_rows(Var<T> a, std::optional<std::size_t> causal_offset = std::nullopt) {
  auto& g = *a.graph;
  const std::size_t m = a.rows(), n = a.cols();
  Tensor<T> out({m, n});
  const auto& av = a.value();
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t lim = causal_offset ? std::min(n, i + *causal_offset + 1) : n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < lim; ++j) mx = std::max(mx, av.at(i, j));
    T z{0};
    for (std::size_t j = 0; j < lim; ++j) {
      out.at(i, j) = std::exp(av.at(i, j) - mx);
      z += out.at(i, j);
    }
    for (std::size_t j = 0; j < lim; ++j) out.at(i, j) /= z;
  }
  return g.push("softmax_rows", std::move(out), g.requires_grad(a), [a, m, n](Graph<T>& g, std::size_t self) {
    const auto& gc = g.out_grad(self);
    const auto& y = g.value(Var<T>{&g, self});
    auto& ga = g.grad_acc(a.id);
    for (std::size_t i = 0; i < m; ++i) {
      T dot{0};
      for (std::size_t j = 0; j < n; ++j) dot += gc.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (gc.at(i, j) - dot);
    }
  });
}

// y = x / sqrt(mean(x^2) + eps) * gain, per row.
template <class T>
Var<T> rms_norm_rows(Var<T> x, Var<T> gain, T eps) {
  auto& g = *x.graph;
  const std::size_t m = x.rows(), n = x.cols();
  if (gain.value().size() != n) detail::shape_error(g, "rms_norm_rows", "gain [" + std::to_string(n) + "]", gain.shape());
  Tensor<T> out({m, n});
  std::vector<T> inv(m);
  const auto& xv = x.value();
  const auto& gv = gain.value();
  for (std::size_t i = 0; i < m; ++i) {
    T ms{0};
    for (std::size_t j = 0; j < n; ++j) ms += xv.at(i, j) * xv.at(i, j);
    ms /= static_cast<T>(n);
    inv[i] = T{1} / std::sqrt(ms + eps);
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = xv.at(i, j) * inv[i] * gv[j];
  }
  return g.push("rms_norm_rows", std::move(out), detail::any_grad(g, {x, gain}),
                [x, gain, m, n, inv](Graph<T>& g, std::size_t self) {
                  const auto& gc = g.out_grad(self);
                  const auto& xv = g.value(x);
                  const auto& gv = g.value(gain);
                  if (g.requires_grad(x)) {
                    auto& gx = g.grad_acc(x.id);
                    for (std::size_t i = 0; i < m; ++i) {
                      T dot{0};
                      for (std::size_t j = 0; j < n; ++j) dot += gc.at(i, j) * gv[j] * xv.at(i, j);
                      const T r = inv[i];
                      const T c = r * r * r * dot / static_cast<T>(n);
                      for (std::size_t j = 0; j < n; ++j) gx.at(i, j) += gc.at(i, j) * gv[j] * r - xv.at(i, j) * c;
                    }
                  }
                  if (g.requires_grad(gain)) {
                    auto& gg = g.grad_acc(gain.id);
                    for (std::size_t i = 0; i < m; ++i)
                      for (std::size_t j = 0; j < n; ++j) gg[j] += gc.at(i, j) * xv.at(i, j) * inv[i];
                  }
                });
}

// Rotary position embedding applied independently to each head_dim-wide
// column block of `x`; row r is rotated by angle positions[r] * theta_i on
// the (2i, 2i+1) sub-plane, theta_i = base^(-2i/head_dim).
template <class T>
void rope_apply(T* row, std::size_t width, std::size_t head_dim, double pos, double base, bool inverse) {
  for (std::size_t h = 0; h < width; h += head_dim) {
    for (std::size_t i = 0; i < head_dim / 2; ++i) {
      const double theta = std::pow(base, -2.0 * static_cast<double>(i) / static_cast<double>(head_dim));
      const double ang = (inverse ? -pos : pos) * theta;
      const T c = static_cast<T>(std::cos(ang)), s = static_cast<T>(std::sin(ang));
      T& x0 = row[h + 2 * i];
      T& x1 = row[h + 2 * i + 1];
      const T a = x0, b = x1;
      x0 = a * c - b * s;
      x1 = a * s + b * c;
    }
  }
}

template <class T>
Var<T> rope(Var<T> x, const std::vector<std::size_t>& positions, std::size_t head_dim, double base = 10000.0) {
  auto& g = *x.graph;
  const std::size_t m = x.rows(), n = x.cols();
  if (head_dim == 0 || head_dim % 2 != 0 || n % head_dim != 0)
    detail::shape_error(g, "rope", "width divisible by even head_dim " + std::to_string(head_dim), x.shape());
  if (positions.size() != m) detail::shape_error(g, "rope", std::to_string(positions.size()) + " rows", x.shape());
  Tensor<T> out = x.value();
  for (std::size_t i = 0; i < m; ++i)
    rope_apply(out.data() + i * n, n, head_dim, static_cast<double>(positions[i]), base, false);
  return g.push("rope", std::move(out), g.requires_grad(x),
                [x, positions, head_dim, base, m, n](Graph<T>& g, std::size_t self) {
                  Tensor<T> back = g.out_grad(self);
                  for (std::size_t i = 0; i < m; ++i)
                    rope_apply(back.data() + i * n, n, head_dim, static_cast<double>(positions[i]), base, true);
                  auto& gx = g.grad_acc(x.id);
                  for (std::size_t i = 0; i < back.size(); ++i) gx[i] += back[i];
                });
}

// ---- losses ----------------------------------------------------------------

// Mean over masked rows of -log softmax(logits[t])[targets[t]].
template <class T>
Var<T> cross_entropy(Var<T> logits, const std::vector<int>& targets, const std::vector<std::uint8_t>& mask) {
  auto& g = *logits.graph;
  const std::size_t m = logits.rows(), n = logits.cols();
  if (targets.size() != m || mask.size() != m)
    detail::shape_error(g, "cross_entropy", std::to_string(targets.size()) + " target rows", logits.shape());
  std::size_t count = 0;
  for (auto b : mask) count += b ? 1 : 0;
  if (count == 0) throw InvalidArgument("cross_entropy: empty answer mask");
  const auto& lv = logits.value();
  Tensor<T> probs({m, n});
  T loss{0};
  for (std::size_t i = 0; i < m; ++i) {
    if (!mask[i]) continue;
    if (targets[i] < 0 || static_cast<std::size_t>(targets[i]) >= n)
      detail::shape_error(g, "cross_entropy", "target < " + std::to_string(n), logits.shape());
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, lv.at(i, j));
    T z{0};
    for (std::size_t j = 0; j < n; ++j) z += std::exp(lv.at(i, j) - mx);
    for (std::size_t j = 0; j < n; ++j) probs.at(i, j) = std::exp(lv.at(i, j) - mx) / z;
    loss += -(lv.at(i, targets[i]) - mx - std::log(z));
  }
  loss /= static_cast<T>(count);
  return g.push("cross_entropy", Tensor<T>::scalar(loss), g.requires_grad(logits),
                [logits, targets, mask, probs = std::move(probs), count, m, n](Graph<T>& g, std::size_t self) {
                  const T gc = g.out_grad(self)[0] / static_cast<T>(count);
                  auto& gl = g.grad_acc(logits.id);
                  for (std::size_t i = 0; i < m; ++i) {
                    if (!mask[i]) continue;
                    for (std::size_t j = 0; j < n; ++j) gl.at(i, j) += gc * probs.at(i, j);
                    gl.at(i, targets[i]) -= gc;
                  }
                });
}

inline constexpr double kNormFloor = 1e-8;

// Cosine similarity of two equally sized tensors viewed as flat vectors.
template <class T>
Var<T> cosine(Var<T> a, Var<T> b) {
  auto& g = *a.graph;
  const auto& av = a.value();
  const auto& bv = b.value();
  if (av.size() != bv.size()) detail::shape_error(g, "cosine", to_string(a.shape()), b.shape());
  T dot{0}, na{0}, nb{0};
  for (std::size_t i = 0; i < av.size(); ++i) {
    dot += av[i] * bv[i];
    na += av[i] * av[i];
    nb += bv[i] * bv[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na < static_cast<T>(kNormFloor) || nb < static_cast<T>(kNormFloor))
    throw InvalidArgument("cosine: zero-norm vector (norm below 1e-8)");
  const T c = dot / (na * nb);
  return g.push("cosine", Tensor<T>::scalar(c), detail::any_grad(g, {a, b}),
                [a, b, na, nb, c](Graph<T>& g, std::size_t self) {
                  const T gc = g.out_grad(self)[0];
                  const auto& av = g.value(a);
                  const auto& bv = g.value(b);
                  // d cos / d a = b/(|a||b|) - cos * a/|a|^2
                  if (g.requires_grad(a)) {
                    auto& ga = g.grad_acc(a.id);
                    for (std::size_t i = 0; i < av.size(); ++i)
                      ga[i] += gc * (bv[i] / (na * nb) - c * av[i] / (na * na));
                  }
                  if (g.requires_grad(b)) {
                    auto& gb = g.grad_acc(b.id);
                    for (std::size_t i = 0; i < bv.size(); ++i)
                      gb[i] += gc * (av[i] / (na * nb) - c * bv[i] / (nb * nb));
                  }
                });
}

}  // namespace cmt::ad
