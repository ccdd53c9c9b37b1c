#pragma once

// Minimal reverse-mode automatic differentiation over dense row-major
// matrices. Every value is a 2-D matrix; scalars are 1x1. A forward pass
// builds a DAG of Nodes that is released when the last Var referencing it
// goes away. Leaf nodes flagged requires_grad (parameters) accumulate
// gradients across backward() calls until zero_grad().

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace unishape::ag {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;  // empty until something flows into it
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backward;

  void zero_grad() { grad.resize(0, 0); }
  bool has_grad() const { return grad.size() != 0; }
};

class Var {
 public:
  Var() = default;
  explicit Var(Matrix value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  Matrix& mutable_value() { return node_->value; }
  // Zero matrix of the value's shape if nothing has flowed back yet.
  Matrix grad() const;
  bool requires_grad() const { return node_ && node_->requires_grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  double item() const;
  bool defined() const { return static_cast<bool>(node_); }

  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

bool grad_enabled();

Var constant(Matrix value);
Var scalar(double v);

/// Seeds d(root)/d(root) = 1 and propagates to every reachable node.
/// root must be 1x1.
void backward(const Var& root);

// Arithmetic.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);  // elementwise
Var scale(const Var& a, double s);
Var add_row(const Var& a, const Var& row);  // broadcasts a 1 x n row over a
Var transpose(const Var& a);

// Elementwise nonlinearities.
Var gelu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

// Row-wise operations.
Var softmax_rows(const Var& a);
Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps = 1e-5);
Var l2_normalize_rows(const Var& a, double eps = 1e-12);

/// 1-D convolution along the row (time) axis with same padding.
/// x: L x Cin, weight: (k*Cin) x Cout laid out tap-major, bias: 1 x Cout.
/// When segment > 0 the rows are treated as independent consecutive
/// segments of that length, with zero padding at every segment border.
Var conv1d_same(const Var& x, const Var& weight, const Var& bias, int kernel, Index segment = 0);

/// Mean over consecutive row groups of length segment: (n*segment) x C -> n x C.
Var segment_mean(const Var& a, Index segment);

// Structural.
Var slice_rows(const Var& a, Index start, Index count);
Var slice_cols(const Var& a, Index start, Index count);
Var gather_rows(const Var& a, std::span<const Index> rows);
Var vconcat(std::span<const Var> parts);
Var hconcat(std::span<const Var> parts);

// Reductions and losses (all return 1x1).
Var mean_all(const Var& a);
Var sum_all(const Var& a);
/// Mean over rows of -log softmax(logits row)[target].
Var cross_entropy(const Var& logits, std::span<const int> targets);

/// Inverted dropout; identity when p == 0.
Var dropout(const Var& a, double p, std::mt19937_64& rng);

// Named collection of trainable leaves. Insertion order is preserved and is
// the canonical order for serialization and optimizer state.
class ParamStore {
 public:
  Var& add(const std::string& name, Matrix init);
  const Var& get(const std::string& name) const;
  Var& get(const std::string& name);
  bool contains(const std::string& name) const;

  std::size_t size() const { return params_.size(); }
  std::size_t num_scalars() const;
  const std::vector<std::pair<std::string, Var>>& entries() const { return params_; }
  std::vector<std::pair<std::string, Var>>& entries() { return params_; }

  void zero_grad();

 private:
  std::vector<std::pair<std::string, Var>> params_;
};

}  // namespace unishape::ag
