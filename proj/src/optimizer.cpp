#include "unishape/optimizer.hpp"

#include <cmath>
#include <numbers>

#include "unishape/error.hpp"

namespace unishape {

Adam::Adam(ag::ParamStore& params, double weight_decay, double beta1, double beta2, double eps)
    : params_(&params), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& [name, var] : params.entries()) {
    m_.push_back(ag::Matrix::Zero(var.rows(), var.cols()));
    v_.push_back(ag::Matrix::Zero(var.rows(), var.cols()));
  }
}

void Adam::step(double learning_rate) {
  auto& entries = params_->entries();
  if (entries.size() != m_.size()) throw ValidationError("Adam: parameter set changed after construction");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < entries.size(); ++i) {
    auto& node = *entries[i].second.node();
    if (!node.has_grad()) continue;
    if (m_[i].rows() != node.value.rows() || m_[i].cols() != node.value.cols()) {
      // Shape changed (e.g. a re-initialized head); restart its moments.
      m_[i] = ag::Matrix::Zero(node.value.rows(), node.value.cols());
      v_[i] = ag::Matrix::Zero(node.value.rows(), node.value.cols());
    }
    ag::Matrix g = node.grad;
    if (weight_decay_ > 0.0) g += weight_decay_ * node.value;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseAbs2();
    node.value.array() -= learning_rate * (m_[i].array() / bc1) / ((v_[i].array() / bc2).sqrt() + eps_);
  }
}

double cosine_lr(double base_lr, std::size_t step, std::size_t total_steps) {
  if (total_steps == 0) return base_lr;
  const double progress = std::min(1.0, static_cast<double>(step) / static_cast<double>(total_steps));
  return 0.5 * base_lr * (1.0 + std::cos(std::numbers::pi * progress));
}

}  // namespace unishape
