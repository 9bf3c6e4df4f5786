#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "phrasebreak/error.hpp"
#include "phrasebreak/neural/tensor.hpp"

namespace phrasebreak::neural {

struct AdamHyperparams {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

template <typename T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::size_t step_count = 0;

  AdamState() = default;
  explicit AdamState(const Shape& shape) : m(shape), v(shape) {}
};

/// One bias-corrected Adam update of p in place. Throws ErrorKind::non_finite
/// (naming the parameter) before touching anything if the gradient is not finite.
template <typename T>
void adam_step(Parameter<T>& p, AdamState<T>& state, double lr, const AdamHyperparams& hp = {}) {
  if (!p.grad.all_finite()) fail(ErrorKind::non_finite, "non-finite gradient in parameter '" + p.name + "'");
  if (state.m.shape() != p.value.shape()) state = AdamState<T>(p.value.shape());
  ++state.step_count;
  const double t = static_cast<double>(state.step_count);
  const double correction1 = 1.0 - std::pow(hp.beta1, t);
  const double correction2 = 1.0 - std::pow(hp.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = static_cast<double>(p.grad[i]);
    const double m = hp.beta1 * static_cast<double>(state.m[i]) + (1.0 - hp.beta1) * g;
    const double v = hp.beta2 * static_cast<double>(state.v[i]) + (1.0 - hp.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    p.value[i] = static_cast<T>(static_cast<double>(p.value[i]) - lr * m_hat / (std::sqrt(v_hat) + hp.epsilon));
  }
}

template <typename T>
double global_grad_norm(const ParameterRefs<T>& params) {
  double sq = 0.0;
  for (const auto* p : params) {
    for (T g : p->grad.values()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  return std::sqrt(sq);
}

/// Rescales all gradients so their global L2 norm is at most max_norm; returns the factor used.
template <typename T>
double clip_gradients(const ParameterRefs<T>& params, double max_norm) {
  if (!(max_norm > 0.0)) fail(ErrorKind::invalid_argument, "clip norm must be positive");
  const double norm = global_grad_norm(params);
  if (!(norm > max_norm)) return 1.0;
  const double factor = max_norm / norm;
  for (auto* p : params) {
    for (auto& g : p->grad.values()) g = static_cast<T>(static_cast<double>(g) * factor);
  }
  return factor;
}

// Adam over a fixed parameter list.
template <typename T>
class Adam {
 public:
  Adam(ParameterRefs<T> params, AdamHyperparams hp = {}) : params_(std::move(params)), hp_(hp) {
    for (auto* p : params_) states_.emplace_back(p->value.shape());
  }

  void step(double lr) {
    for (std::size_t i = 0; i < params_.size(); ++i) adam_step(*params_[i], states_[i], lr, hp_);
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  const ParameterRefs<T>& parameters() const { return params_; }

 private:
  ParameterRefs<T> params_;
  std::vector<AdamState<T>> states_;
  AdamHyperparams hp_;
};

}  // namespace phrasebreak::neural
