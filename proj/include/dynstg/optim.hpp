#pragma once

#include "dynstg/tensor.hpp"

namespace dynstg {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;  // L2 term folded into the gradient
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamConfig config)
      : params_(std::move(params)), config_(config) {
    for (const Tensor& p : params_) {
      if (!p.requires_grad())
        throw ContractError("adam: parameter does not require gradients");
      m_.emplace_back(p.numel(), 0.0);
      v_.emplace_back(p.numel(), 0.0);
    }
  }

  void zero_grad() {
    for (Tensor& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& data = params_[i].mutable_data();
      const auto& grad = params_[i].grad();
      for (std::size_t j = 0; j < data.size(); ++j) {
        const double g = grad[j] + config_.weight_decay * data[j];
        m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
        v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
        const double mhat = m_[i][j] / bc1;
        const double vhat = v_[i][j] / bc2;
        data[j] -= config_.learning_rate * mhat / (std::sqrt(vhat) + config_.epsilon);
      }
    }
  }

  std::size_t steps_taken() const { return t_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig config_;
  std::vector<std::vector<double>> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace dynstg
