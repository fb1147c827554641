#include "cmt/optimizer.hpp"

#include <cmath>

namespace cmt {

AdamW::AdamW(ParamList params, AdamWOptions opts) : params_(std::move(params)), opts_(opts) {
  for (Parameter* p : params_) {
    m_.emplace_back(p->value.size(), 0.0f);
    v_.emplace_back(p->value.size(), 0.0f);
    if (p->grad.shape() != p->value.shape()) p->zero_grad();
  }
}

void AdamW::zero_grad() {
  for (Parameter* p : params_) p->grad.fill(0.0f);
}

double AdamW::step(double lr, double grad_scale) {
  double sq = 0.0;
  for (Parameter* p : params_)
    for (float g : p->grad.vec()) sq += static_cast<double>(g) * g / (grad_scale * grad_scale);
  const double norm = std::sqrt(sq);
  double clip = 1.0;
  if (opts_.grad_clip > 0 && norm > opts_.grad_clip) clip = opts_.grad_clip / norm;
  ++t_;
  const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& p = *params_[i];
    const bool decay = p.value.rank() >= 2;
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.value.size(); ++j) {
      const double g = static_cast<double>(p.grad[j]) / grad_scale * clip;
      m[j] = static_cast<float>(opts_.beta1 * m[j] + (1.0 - opts_.beta1) * g);
      v[j] = static_cast<float>(opts_.beta2 * v[j] + (1.0 - opts_.beta2) * g * g);
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double w = p.value[j];
      if (decay) w -= lr * opts_.weight_decay * w;
      w -= lr * mhat / (std::sqrt(vhat) + opts_.eps);
      p.value[j] = static_cast<float>(w);
    }
  }
  zero_grad();
  return norm;
}

double constant_with_warmup(long step, long warmup_steps) {
  if (warmup_steps <= 0 || step >= warmup_steps) return 1.0;
  return static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
}

}  // namespace cmt
