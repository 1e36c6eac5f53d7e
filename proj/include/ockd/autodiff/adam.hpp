#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ockd/autodiff/tensor.hpp"

namespace ockd::ad {

struct AdamOptions {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.98;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
};

/// Classic Adam with coupled L2 weight decay: the decay term is folded into
/// the gradient before the moment updates.
class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options = {})
      : params_(std::move(params)), options_(options) {
    first_.reserve(params_.size());
    second_.reserve(params_.size());
    for (const auto& p : params_) {
      first_.emplace_back(p.size(), 0.0);
      second_.emplace_back(p.size(), 0.0);
    }
  }

  void step() {
    for (std::size_t k = 0; k < params_.size(); ++k) {
      if (!params_[k].has_grad()) {
        throw Error(ErrorKind::kNumeric,
                    "adam: parameter " + std::to_string(k) + " has no gradient");
      }
    }
    ++step_count_;
    const double b1 = options_.beta1, b2 = options_.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_count_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto w = params_[k].mutable_data();
      const auto g = params_[k].grad();
      auto& m = first_[k];
      auto& v = second_[k];
      for (std::size_t i = 0; i < w.size(); ++i) {
        const double gi = g[i] + options_.weight_decay * w[i];
        m[i] = b1 * m[i] + (1.0 - b1) * gi;
        v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        w[i] -= options_.learning_rate * m_hat / (std::sqrt(v_hat) + options_.epsilon);
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  std::int64_t step_count() const { return step_count_; }
  const AdamOptions& options() const { return options_; }
  std::span<const double> first_moment(std::size_t k) const { return first_.at(k); }
  std::span<const double> second_moment(std::size_t k) const { return second_.at(k); }

 private:
  std::vector<Tensor> params_;
  AdamOptions options_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::int64_t step_count_ = 0;
};

}  // namespace ockd::ad
