#pragma once

#include <cmath>
#include <vector>

#include "dmh/tensor.hpp"

namespace dmh {

struct OptimizerConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
  double clip_norm = 0.25;
  int64_t warmup_steps = 100000;  // linear warmup, then constant
};

// Adam with decoupled weight decay, global gradient-norm clipping and linear
// learning-rate warmup. Grads are zeroed after each step.
template <typename Real>
class AdamW {
 public:
  AdamW(std::vector<Tensor<Real>> params, OptimizerConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(static_cast<size_t>(params_[i].size()), 0.0);
      v_[i].assign(static_cast<size_t>(params_[i].size()), 0.0);
    }
  }

  int64_t step_count() const { return step_; }

  double effective_lr() const {
    int64_t t = step_ + 1;
    if (cfg_.warmup_steps > 0 && t < cfg_.warmup_steps)
      return cfg_.lr * static_cast<double>(t) / static_cast<double>(cfg_.warmup_steps);
    return cfg_.lr;
  }

  double grad_norm() const {
    double sq = 0;
    for (const auto& p : params_)
      for (int64_t i = 0; i < p.size(); ++i) {
        double g = static_cast<double>(p.grad()[i]);
        sq += g * g;
      }
    return std::sqrt(sq);
  }

  void step() {
    double lr = effective_lr();
    ++step_;
    double norm = grad_norm();
    double clip = cfg_.clip_norm > 0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm : 1.0;
    double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      auto& grad = p.grad();
      for (int64_t i = 0; i < p.size(); ++i) {
        double g = static_cast<double>(grad[i]) * clip;
        m_[k][i] = cfg_.beta1 * m_[k][i] + (1.0 - cfg_.beta1) * g;
        v_[k][i] = cfg_.beta2 * v_[k][i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = m_[k][i] / bc1;
        double vhat = v_[k][i] / bc2;
        double upd = mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * p.data()[i];
        p.data()[i] -= static_cast<Real>(lr * upd);
      }
      p.zero_grad();
    }
  }

 private:
  std::vector<Tensor<Real>> params_;
  OptimizerConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  int64_t step_ = 0;
};

}  // namespace dmh
