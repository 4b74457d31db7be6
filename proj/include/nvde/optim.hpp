#pragma once

#include <vector>

#include "nvde/tensor.hpp"

namespace nvde {

// Standard Adam with bias correction. One state per parameter tensor.
template <typename T>
struct AdamState {
  Tensor<T> m, v;
  int64_t step = 0;
  int64_t skipped = 0;  // non-finite gradients encountered
};

template <typename T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state, double lr,
               double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8) {
  check(param.same_shape(grad), "adam_step: shape mismatch");
  if (state.m.empty()) {
    state.m = Tensor<T>::zeros(param.shape);
    state.v = Tensor<T>::zeros(param.shape);
  }
  if (!grad.all_finite()) {
    ++state.skipped;
    ++state.step;
    return;
  }
  ++state.step;
  double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (int64_t i = 0; i < param.numel(); ++i) {
    double gi = static_cast<double>(grad[i]);
    double mi = beta1 * static_cast<double>(state.m[i]) + (1.0 - beta1) * gi;
    double vi = beta2 * static_cast<double>(state.v[i]) + (1.0 - beta2) * gi * gi;
    state.m[i] = static_cast<T>(mi);
    state.v[i] = static_cast<T>(vi);
    double mh = mi / bc1;
    double vh = vi / bc2;
    param[i] = static_cast<T>(static_cast<double>(param[i]) - lr * mh / (std::sqrt(vh) + eps));
  }
}

// A bundle of parameters sharing one optimizer configuration.
template <typename T>
class AdamOptimizer {
 public:
  AdamOptimizer(std::vector<Tensor<T>*> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), states_(params_.size()), lr_(lr), beta1_(beta1),
        beta2_(beta2), eps_(eps) {}

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }

  void step(const std::vector<const Tensor<T>*>& grads) {
    check(grads.size() == params_.size(), "adam: gradient count mismatch");
    for (size_t i = 0; i < params_.size(); ++i)
      adam_step(*params_[i], *grads[i], states_[i], lr_, beta1_, beta2_, eps_);
  }

  int64_t skipped() const {
    int64_t s = 0;
    for (const auto& st : states_) s += st.skipped;
    return s;
  }

 private:
  std::vector<Tensor<T>*> params_;
  std::vector<AdamState<T>> states_;
  double lr_, beta1_, beta2_, eps_;
};

}  // namespace nvde
