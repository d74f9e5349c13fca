#pragma once

#include <cstdint>
#include <vector>

#include "qan/autodiff.hpp"

namespace qan {

struct AdamConfig {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-5;  // added to the gradient as λ·w
};

// Moment estimates for one parameter tensor.
struct AdamMoments {
  Matrix m;
  Matrix v;
};

// Bias-corrected Adam with L2 folded into the gradient. Moments are keyed by
// position in the ParameterSet, so the set must not change between steps.
class Adam {
 public:
  explicit Adam(AdamConfig config = {}) : config_(config) {}

  // Increments the step counter, then updates every parameter from its grad.
  void step(ParameterSet& params);

  const AdamConfig& config() const { return config_; }
  std::uint64_t steps() const { return t_; }
  const std::vector<AdamMoments>& moments() const { return moments_; }

 private:
  AdamConfig config_;
  std::uint64_t t_ = 0;
  std::vector<AdamMoments> moments_;
};

// Single-tensor update used by Adam::step; `t` is the already-incremented
// step count.
void adam_update(Matrix& param, const Matrix& grad, AdamMoments& moments, std::uint64_t t,
                 const AdamConfig& config);

}  // namespace qan
