#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "latte/tensor.hpp"

namespace latte {

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
using ParameterList = std::vector<NamedTensor<T>>;

/// Linear warm-up: lr(epoch) = base * min(1, (epoch + 1) / warmup), constant
/// within an epoch.
inline double warmup_learning_rate(double base, std::size_t epoch, std::size_t warmup_epochs) {
  if (warmup_epochs == 0) return base;
  return base * std::min(1.0, static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs));
}

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <typename T>
class Adam {
 public:
  explicit Adam(ParameterList<T> params, AdamOptions opts = {})
      : params_(std::move(params)), opts_(opts) {
    for (const auto& p : params_) {
      first_.emplace_back(p.tensor.numel(), 0.0);
      second_.emplace_back(p.tensor.numel(), 0.0);
    }
  }

  /// One bias-corrected Adam update at learning rate `lr`; gradients are
  /// zeroed afterwards.
  void step(double lr) {
    for (const auto& p : params_) {
      if (!p.tensor.has_grad()) throw Error("missing_gradient", "no gradient for parameter '" + p.name + "'");
    }
    ++step_;
    const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto tensor = params_[k].tensor;
      auto values = tensor.data();
      auto grads = tensor.grad();
      auto& m = first_[k];
      auto& u = second_[k];
      for (std::size_t i = 0; i < values.size(); ++i) {
        const double g = static_cast<double>(grads[i]);
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g;
        u[i] = opts_.beta2 * u[i] + (1.0 - opts_.beta2) * g * g;
        const double mhat = m[i] / c1;
        const double uhat = u[i] / c2;
        values[i] = static_cast<T>(static_cast<double>(values[i]) - lr * mhat / (std::sqrt(uhat) + opts_.eps));
      }
      tensor.zero_grad();
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

  std::size_t steps() const noexcept { return step_; }
  const ParameterList<T>& parameters() const noexcept { return params_; }

 private:
  ParameterList<T> params_;
  AdamOptions opts_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

}  // namespace latte
