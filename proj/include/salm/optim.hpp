#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "salm/error.hpp"
#include "salm/tensor.hpp"

namespace salm {

namespace detail {

/// Global gradient norm across all parameters, accumulated serially in
/// double so the result does not depend on parameter sizes or threading.
template <typename T>
double global_grad_norm(std::vector<Tensor<T>>& params) {
  double sq = 0.0;
  for (auto& p : params) {
    for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
  }
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm in optimizer step");
  return norm;
}

template <typename T>
void clip_gradients(std::vector<Tensor<T>>& params, double clip_norm) {
  if (clip_norm <= 0.0) {
    global_grad_norm(params);  // still reject non-finite gradients
    return;
  }
  const double norm = global_grad_norm(params);
  if (norm <= clip_norm) return;
  const T factor = static_cast<T>(clip_norm / norm);
  for (auto& p : params) {
    for (auto& g : p.grad()) g *= factor;
  }
}

}  // namespace detail

template <typename T>
void zero_grads(std::vector<Tensor<T>>& params) {
  for (auto& p : params) {
    auto g = p.grad();
    std::fill(g.begin(), g.end(), T(0));
  }
}

template <typename T>
class SgdOptimizer {
 public:
  SgdOptimizer(double lr, double clip_norm = 0.0) : lr_(lr), clip_norm_(clip_norm) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }

  /// One update with global-norm clipping applied first. `lr_factor` scales
  /// this step only (variable-length BPTT uses l/L).
  void step(std::vector<Tensor<T>>& params, double lr_factor = 1.0) {
    detail::clip_gradients(params, clip_norm_);
    const T eta = static_cast<T>(lr_ * lr_factor);
    for (auto& p : params) {
      auto data = p.data();
      auto grad = p.grad();
      for (std::size_t i = 0; i < data.size(); ++i) data[i] -= eta * grad[i];
    }
  }

 private:
  double lr_;
  double clip_norm_;
};

template <typename T>
class AdamWOptimizer {
 public:
  AdamWOptimizer(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8,
                 double weight_decay = 0.0, double clip_norm = 0.0)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay),
        clip_norm_(clip_norm) {}

  double lr() const { return lr_; }
  void set_lr(double lr) { lr_ = lr; }
  long long step_count() const { return t_; }

  void step(std::vector<Tensor<T>>& params) {
    if (m_.empty()) {
      for (auto& p : params) {
        m_.emplace_back(p.size(), T(0));
        v_.emplace_back(p.size(), T(0));
      }
    }
    if (m_.size() != params.size()) throw ConfigError("AdamW state does not match parameters");
    detail::clip_gradients(params, clip_norm_);
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
      auto data = params[pi].data();
      auto grad = params[pi].grad();
      auto& m = m_[pi];
      auto& v = v_[pi];
      for (std::size_t i = 0; i < data.size(); ++i) {
        const double g = static_cast<double>(grad[i]);
        m[i] = static_cast<T>(beta1_ * m[i] + (1.0 - beta1_) * g);
        v[i] = static_cast<T>(beta2_ * v[i] + (1.0 - beta2_) * g * g);
        const double mhat = static_cast<double>(m[i]) / bc1;
        const double vhat = static_cast<double>(v[i]) / bc2;
        // Decoupled weight decay, then the moment update.
        double x = static_cast<double>(data[i]);
        x -= lr_ * weight_decay_ * x;
        x -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        data[i] = static_cast<T>(x);
      }
    }
  }

  /// Moment vectors for checkpointing, flattened in parameter order.
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  void restore_state(std::vector<std::vector<T>> m, std::vector<std::vector<T>> v,
                     long long step_count) {
    m_ = std::move(m);
    v_ = std::move(v);
    t_ = step_count;
  }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_, clip_norm_;
  long long t_ = 0;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace salm
