#pragma once

#include <vector>

#include "cmt/parameter.hpp"

namespace cmt {

struct AdamWOptions {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  double grad_clip = 1.0;  // global L2 norm; <= 0 disables
};

// AdamW with decoupled weight decay. Weight decay skips 1-D parameters
// (norm gains, biases).
class AdamW {
 public:
  AdamW(ParamList params, AdamWOptions opts);

  // Applies one update with learning rate `lr` using the accumulated grads
  // (divided by `grad_scale`), then zeroes them. Returns the pre-clip norm.
  double step(double lr, double grad_scale = 1.0);
  void zero_grad();
  long steps() const { return t_; }

 private:
  ParamList params_;
  AdamWOptions opts_;
  std::vector<std::vector<float>> m_, v_;
  long t_ = 0;
};

// Linear warmup to 1 over `warmup_steps`, then constant.
double constant_with_warmup(long step, long warmup_steps);

}  // namespace cmt
