#pragma once

#include <string>
#include <vector>

#include "cmt/tensor.hpp"

namespace cmt {

// A named trainable (or frozen) f32 tensor with its gradient buffer.
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(shape), grad(shape) {}

  std::string name;
  Tensor<float> value;
  Tensor<float> grad;
  bool requires_grad = true;

  void zero_grad() { grad = Tensor<float>(value.shape()); }
};

// Non-owning, ordered view over a module's parameters. Order is the declared
// order used by checkpoints and optimizers.
using ParamList = std::vector<Parameter*>;

}  // namespace cmt
