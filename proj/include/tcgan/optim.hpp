#pragma once

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

#include "tcgan/tensor.hpp"

namespace tcgan {

struct AdamConfig {
  double alpha = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Bias-corrected Adam over a fixed parameter list. One instance per
/// network; moments live here, gradients live on the parameters.
template <class Scalar>
class Adam {
 public:
  Adam(std::vector<Tensor<Scalar>> params, AdamConfig config)
      : params_(std::move(params)), config_(config) {
    moments_.reserve(params_.size());
    for (const auto& p : params_)
      moments_.push_back({ArrayX<Scalar>::Zero(p.size()), ArrayX<Scalar>::Zero(p.size())});
  }

  /// Applies one update in place from the gradients currently on the
  /// parameters. Every parameter must carry a gradient.
  void step() {
    ++step_count_;
    const Scalar a = static_cast<Scalar>(config_.alpha);
    const Scalar b1 = static_cast<Scalar>(config_.beta1);
    const Scalar b2 = static_cast<Scalar>(config_.beta2);
    const Scalar eps = static_cast<Scalar>(config_.epsilon);
    const Scalar corr1 =
        Scalar(1) - static_cast<Scalar>(std::pow(config_.beta1, static_cast<double>(step_count_)));
    const Scalar corr2 =
        Scalar(1) - static_cast<Scalar>(std::pow(config_.beta2, static_cast<double>(step_count_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor<Scalar>& p = params_[k];
      if (!p.has_grad())
        throw std::runtime_error("adam: parameter " + std::to_string(k) + " has no gradient");
      const ArrayX<Scalar>& g = p.grad();
      Moments& m = moments_[k];
      m.first_moment = b1 * m.first_moment + (Scalar(1) - b1) * g;
      m.second_moment = b2 * m.second_moment + (Scalar(1) - b2) * g.square();
      p.values_mut() -=
          a * (m.first_moment / corr1) / ((m.second_moment / corr2).sqrt() + eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) {
      p.node()->ensure_grad();
      p.zero_grad();
    }
  }

  long step_count() const { return step_count_; }
  const AdamConfig& config() const { return config_; }
  const std::vector<Tensor<Scalar>>& params() const { return params_; }

 private:
  struct Moments {
    ArrayX<Scalar> first_moment;
    ArrayX<Scalar> second_moment;
  };

  std::vector<Tensor<Scalar>> params_;
  std::vector<Moments> moments_;
  AdamConfig config_;
  long step_count_ = 0;
};

}  // namespace tcgan
