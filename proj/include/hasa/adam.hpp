#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "hasa/tape.hpp"

namespace hasa {

// Adam with bias correction. Moment state persists across step() calls and
// can be exported/imported for checkpoints. Frozen parameters are never
// updated, even when they carry a gradient.
class Adam {
 public:
  struct Slot {
    std::vector<float> m, v;
  };

  Adam(std::vector<Parameter*> params, float lr, float beta1 = 0.9f, float beta2 = 0.999f,
       float eps = 1e-8f)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    slots_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      const size_t n = params_[i]->value.data.size();
      slots_[i].m.assign(n, 0.0f);
      slots_[i].v.assign(n, 0.0f);
    }
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(static_cast<double>(beta1_), static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(static_cast<double>(beta2_), static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      Parameter* p = params_[i];
      if (p->frozen) continue;
      if (!p->grad)
        throw UsageError("adam: missing gradient for parameter '" + p->name + "'");
      const Tensor& g = *p->grad;
      auto& s = slots_[i];
      float* pv = p->value.data.data();
      for (size_t k = 0; k < g.data.size(); ++k) {
        const float gk = g.data[k];
        s.m[k] = beta1_ * s.m[k] + (1.0f - beta1_) * gk;
        s.v[k] = beta2_ * s.v[k] + (1.0f - beta2_) * gk * gk;
        const double mh = s.m[k] / bc1;
        const double vh = s.v[k] / bc2;
        pv[k] -= static_cast<float>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  void zero_grads() {
    for (Parameter* p : params_) p->grad.reset();
  }

  void set_lr(float lr) { lr_ = lr; }
  float lr() const { return lr_; }
  int64_t steps_taken() const { return t_; }
  const std::vector<Parameter*>& params() const { return params_; }

  const std::vector<Slot>& slots() const { return slots_; }
  void restore(const std::vector<Slot>& slots, int64_t t) {
    if (slots.size() != slots_.size()) throw UsageError("adam: state size mismatch on restore");
    slots_ = slots;
    t_ = t;
  }

 private:
  std::vector<Parameter*> params_;
  std::vector<Slot> slots_;
  float lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace hasa
