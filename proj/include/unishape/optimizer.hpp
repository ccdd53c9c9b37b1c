#pragma once

#include <cstddef>
#include <vector>

#include "unishape/autograd.hpp"

namespace unishape {

/// Adam with L2 weight decay folded into the gradient.
class Adam {
 public:
  Adam(ag::ParamStore& params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

  /// One update of every parameter that received a gradient.
  void step(double learning_rate);
  std::size_t steps_taken() const { return t_; }

 private:
  ag::ParamStore* params_;
  double weight_decay_;
  double beta1_;
  double beta2_;
  double eps_;
  std::size_t t_ = 0;
  std::vector<ag::Matrix> m_;
  std::vector<ag::Matrix> v_;
};

/// Cosine decay from base_lr at step 0 to 0 at total_steps.
double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps);

}  // namespace unishape
