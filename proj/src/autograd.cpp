#include "unishape/autograd.hpp"

#include <cmath>
#include <numbers>
#include <unordered_set>

#include "unishape/error.hpp"

namespace unishape::ag {
namespace {

thread_local bool g_grad_enabled = true;

void accumulate(Node& n, const Matrix& g) {
  if (!n.requires_grad) return;
  if (!n.has_grad()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

template <typename Expr>
void accumulate_expr(Node& n, const Expr& g) {
  if (!n.requires_grad) return;
  if (!n.has_grad()) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Var make_result(Matrix value, std::vector<Var> inputs, std::function<void(Node&)> fn) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  if (g_grad_enabled) {
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (any) {
      node->requires_grad = true;
      node->inputs.reserve(inputs.size());
      for (auto& in : inputs) node->inputs.push_back(in.node());
      node->backward = std::move(fn);
    }
  }
  return Var(std::move(node));
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
  }
}

double gelu_scalar(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

}  // namespace

Var::Var(Matrix value, bool requires_grad) : node_(std::make_shared<Node>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

Matrix Var::grad() const {
  if (node_->has_grad()) return node_->grad;
  return Matrix::Zero(rows(), cols());
}

double Var::item() const {
  if (rows() != 1 || cols() != 1) throw ShapeError("item() on a non-scalar value");
  return node_->value(0, 0);
}

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

bool grad_enabled() { return g_grad_enabled; }

Var constant(Matrix value) { return Var(std::move(value), false); }

Var scalar(double v) {
  Matrix m(1, 1);
  m(0, 0) = v;
  return constant(std::move(m));
}

void backward(const Var& root) {
  if (root.rows() != 1 || root.cols() != 1) throw ShapeError("backward() requires a scalar root");
  if (!root.requires_grad()) return;

  // Post-order DFS gives a topological order with inputs before consumers.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->inputs.size()) {
      Node* child = node->inputs[next++].get();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  accumulate(*root.node(), Matrix::Ones(1, 1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->has_grad()) n->backward(*n);
  }
  // Interior gradients are no longer needed; leaves keep theirs.
  for (Node* n : order) {
    if (n->backward) n->zero_grad();
  }
}

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions " + std::to_string(a.cols()) + " and " +
                     std::to_string(b.rows()) + " differ");
  }
  Matrix out = a.value() * b.value();
  return make_result(std::move(out), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) accumulate_expr(x, self.grad * y.value.transpose());
    if (y.requires_grad) accumulate_expr(y, x.value.transpose() * self.grad);
  });
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make_result(a.value() + b.value(), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate(*self.inputs[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make_result(a.value() - b.value(), {a, b}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate_expr(*self.inputs[1], -self.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  return make_result(a.value().cwiseProduct(b.value()), {a, b}, [](Node& self) {
    Node& x = *self.inputs[0];
    Node& y = *self.inputs[1];
    if (x.requires_grad) accumulate_expr(x, self.grad.cwiseProduct(y.value));
    if (y.requires_grad) accumulate_expr(y, self.grad.cwiseProduct(x.value));
  });
}

Var scale(const Var& a, double s) {
  return make_result(a.value() * s, {a},
                     [s](Node& self) { accumulate_expr(*self.inputs[0], self.grad * s); });
}

Var add_row(const Var& a, const Var& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) throw ShapeError("add_row: row must be 1 x cols");
  Matrix out = a.value().rowwise() + row.value().row(0);
  return make_result(std::move(out), {a, row}, [](Node& self) {
    accumulate(*self.inputs[0], self.grad);
    accumulate_expr(*self.inputs[1], self.grad.colwise().sum());
  });
}

Var transpose(const Var& a) {
  Matrix out = a.value().transpose();
  return make_result(std::move(out), {a},
                     [](Node& self) { accumulate_expr(*self.inputs[0], self.grad.transpose()); });
}

Var gelu(const Var& a) {
  Matrix out = a.value().unaryExpr(&gelu_scalar);
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    accumulate_expr(x, self.grad.cwiseProduct(x.value.unaryExpr(&gelu_grad)));
  });
}

Var tanh(const Var& a) {
  Matrix out = a.value().array().tanh().matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value.array();
    accumulate_expr(*self.inputs[0], (self.grad.array() * (1.0 - y * y)).matrix());
  });
}

Var sigmoid(const Var& a) {
  Matrix out = (1.0 / (1.0 + (-a.value().array()).exp())).matrix();
  return make_result(std::move(out), {a}, [](Node& self) {
    const auto& y = self.value.array();
    accumulate_expr(*self.inputs[0], (self.grad.array() * y * (1.0 - y)).matrix());
  });
}

Var softmax_rows(const Var& a) {
  Matrix out = a.value();
  for (Index r = 0; r < out.rows(); ++r) {
    const double mx = out.row(r).maxCoeff();
    out.row(r) = (out.row(r).array() - mx).exp().matrix();
    out.row(r) /= out.row(r).sum();
  }
  return make_result(std::move(out), {a}, [](Node& self) {
    const Matrix& y = self.value;
    Matrix gy = self.grad.cwiseProduct(y);
    Eigen::VectorXd dot = gy.rowwise().sum();
    Matrix g = gy - (y.array().colwise() * dot.array()).matrix();
    accumulate(*self.inputs[0], g);
  });
}

Var layer_norm_rows(const Var& a, const Var& gamma, const Var& beta, double eps) {
  const Index n = a.cols();
  if (gamma.rows() != 1 || gamma.cols() != n || beta.rows() != 1 || beta.cols() != n) {
    throw ShapeError("layer_norm_rows: gamma/beta must be 1 x cols");
  }
  Matrix xhat(a.rows(), n);
  Eigen::VectorXd inv_std(a.rows());
  for (Index r = 0; r < a.rows(); ++r) {
    const double mean = a.value().row(r).mean();
    const double var = (a.value().row(r).array() - mean).square().mean();
    inv_std(r) = 1.0 / std::sqrt(var + eps);
    xhat.row(r) = (a.value().row(r).array() - mean) * inv_std(r);
  }
  Matrix out = (xhat.array().rowwise() * gamma.value().row(0).array()).matrix();
  out.rowwise() += beta.value().row(0);
  return make_result(std::move(out), {a, gamma, beta},
                     [xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       Node& x = *self.inputs[0];
                       Node& g = *self.inputs[1];
                       Node& b = *self.inputs[2];
                       const Matrix& dy = self.grad;
                       if (g.requires_grad) accumulate_expr(g, dy.cwiseProduct(xhat).colwise().sum());
                       if (b.requires_grad) accumulate_expr(b, dy.colwise().sum());
                       if (x.requires_grad) {
                         Matrix dxhat = (dy.array().rowwise() * g.value.row(0).array()).matrix();
                         Matrix dx(dy.rows(), dy.cols());
                         for (Index r = 0; r < dy.rows(); ++r) {
                           const double m1 = dxhat.row(r).mean();
                           const double m2 = dxhat.row(r).cwiseProduct(xhat.row(r)).mean();
                           dx.row(r) =
                               (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2) * inv_std(r);
                         }
                         accumulate(x, dx);
                       }
                     });
}

Var l2_normalize_rows(const Var& a, double eps) {
  Eigen::VectorXd norms = a.value().rowwise().norm().cwiseMax(eps);
  Matrix out = a.value().array().colwise() / norms.array();
  return make_result(std::move(out), {a}, [norms = std::move(norms), eps](Node& self) {
    const Matrix& y = self.value;
    const Matrix& dy = self.grad;
    Matrix dx(dy.rows(), dy.cols());
    for (Index r = 0; r < dy.rows(); ++r) {
      if (norms(r) > eps) {
        const double proj = y.row(r).dot(dy.row(r));
        dx.row(r) = (dy.row(r) - y.row(r) * proj) / norms(r);
      } else {
        dx.row(r) = dy.row(r) / eps;
      }
    }
    accumulate(*self.inputs[0], dx);
  });
}

Var conv1d_same(const Var& x, const Var& weight, const Var& bias, int kernel, Index segment) {
  if (kernel < 1 || kernel % 2 == 0) throw ShapeError("conv1d_same: kernel must be odd");
  const Index length = x.rows();
  const Index cin = x.cols();
  const Index cout = weight.cols();
  if (weight.rows() != kernel * cin) throw ShapeError("conv1d_same: weight rows != kernel * Cin");
  if (bias.rows() != 1 || bias.cols() != cout) throw ShapeError("conv1d_same: bias must be 1 x Cout");
  const Index seg = segment > 0 ? segment : length;
  if (length % seg != 0) throw ShapeError("conv1d_same: rows not divisible by segment");
  const int pad = kernel / 2;

  Matrix cols = Matrix::Zero(length, kernel * cin);
  const Matrix& xv = x.value();
  for (Index t = 0; t < length; ++t) {
    const Index lo = (t / seg) * seg;
    const Index hi = lo + seg;
    for (int j = 0; j < kernel; ++j) {
      const Index src = t + j - pad;
      if (src < lo || src >= hi) continue;
      cols.block(t, j * cin, 1, cin) = xv.row(src);
    }
  }
  Matrix out = cols * weight.value();
  out.rowwise() += bias.value().row(0);
  return make_result(std::move(out), {x, weight, bias},
                     [cols = std::move(cols), kernel, pad, seg, cin](Node& self) {
                       Node& xn = *self.inputs[0];
                       Node& wn = *self.inputs[1];
                       Node& bn = *self.inputs[2];
                       const Matrix& dy = self.grad;
                       if (wn.requires_grad) accumulate_expr(wn, cols.transpose() * dy);
                       if (bn.requires_grad) accumulate_expr(bn, dy.colwise().sum());
                       if (xn.requires_grad) {
                         Matrix dcols = dy * wn.value.transpose();
                         const Index length = dy.rows();
                         Matrix dx = Matrix::Zero(length, cin);
                         for (Index t = 0; t < length; ++t) {
                           const Index lo = (t / seg) * seg;
                           const Index hi = lo + seg;
                           for (int j = 0; j < kernel; ++j) {
                             const Index src = t + j - pad;
                             if (src < lo || src >= hi) continue;
                             dx.row(src) += dcols.block(t, j * cin, 1, cin);
                           }
                         }
                         accumulate(xn, dx);
                       }
                     });
}

Var segment_mean(const Var& a, Index segment) {
  if (segment < 1 || a.rows() % segment != 0) throw ShapeError("segment_mean: bad segment length");
  const Index groups = a.rows() / segment;
  Matrix out(groups, a.cols());
  for (Index g = 0; g < groups; ++g) {
    out.row(g) = a.value().middleRows(g * segment, segment).colwise().mean();
  }
  return make_result(std::move(out), {a}, [segment](Node& self) {
    Node& x = *self.inputs[0];
    Matrix dx(x.value.rows(), x.value.cols());
    const double inv = 1.0 / static_cast<double>(segment);
    for (Index g = 0; g < self.grad.rows(); ++g) {
      dx.middleRows(g * segment, segment).rowwise() = self.grad.row(g) * inv;
    }
    accumulate(x, dx);
  });
}

Var slice_rows(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) throw ShapeError("slice_rows: out of range");
  Matrix out = a.value().middleRows(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    Matrix dx = Matrix::Zero(x.value.rows(), x.value.cols());
    dx.middleRows(start, count) = self.grad;
    accumulate(x, dx);
  });
}

Var slice_cols(const Var& a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) throw ShapeError("slice_cols: out of range");
  Matrix out = a.value().middleCols(start, count);
  return make_result(std::move(out), {a}, [start, count](Node& self) {
    Node& x = *self.inputs[0];
    Matrix dx = Matrix::Zero(x.value.rows(), x.value.cols());
    dx.middleCols(start, count) = self.grad;
    accumulate(x, dx);
  });
}

Var gather_rows(const Var& a, std::span<const Index> rows) {
  Matrix out(static_cast<Index>(rows.size()), a.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] < 0 || rows[i] >= a.rows()) throw ShapeError("gather_rows: index out of range");
    out.row(static_cast<Index>(i)) = a.value().row(rows[i]);
  }
  std::vector<Index> idx(rows.begin(), rows.end());
  return make_result(std::move(out), {a}, [idx = std::move(idx)](Node& self) {
    Node& x = *self.inputs[0];
    Matrix dx = Matrix::Zero(x.value.rows(), x.value.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) dx.row(idx[i]) += self.grad.row(static_cast<Index>(i));
    accumulate(x, dx);
  });
}

Var vconcat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("vconcat: no inputs");
  Index rows = 0;
  const Index cols = parts[0].cols();
  for (const auto& p : parts) {
    if (p.cols() != cols) throw ShapeError("vconcat: column count mismatch");
    rows += p.rows();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         Node& in = *self.inputs[i];
                         if (in.requires_grad) {
                           accumulate_expr(in, self.grad.middleRows(offsets[i], in.value.rows()));
                         }
                       }
                     });
}

Var hconcat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("hconcat: no inputs");
  Index cols = 0;
  const Index rows = parts[0].rows();
  for (const auto& p : parts) {
    if (p.rows() != rows) throw ShapeError("hconcat: row count mismatch");
    cols += p.cols();
  }
  Matrix out(rows, cols);
  std::vector<Index> offsets;
  Index at = 0;
  for (const auto& p : parts) {
    offsets.push_back(at);
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  return make_result(std::move(out), std::vector<Var>(parts.begin(), parts.end()),
                     [offsets = std::move(offsets)](Node& self) {
                       for (std::size_t i = 0; i < self.inputs.size(); ++i) {
                         Node& in = *self.inputs[i];
                         if (in.requires_grad) {
                           accumulate_expr(in, self.grad.middleCols(offsets[i], in.value.cols()));
                         }
                       }
                     });
}

Var mean_all(const Var& a) {
  const double n = static_cast<double>(a.value().size());
  Matrix out(1, 1);
  out(0, 0) = a.value().sum() / n;
  return make_result(std::move(out), {a}, [n](Node& self) {
    Node& x = *self.inputs[0];
    accumulate_expr(x, Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0) / n));
  });
}

Var sum_all(const Var& a) {
  Matrix out(1, 1);
  out(0, 0) = a.value().sum();
  return make_result(std::move(out), {a}, [](Node& self) {
    Node& x = *self.inputs[0];
    accumulate_expr(x, Matrix::Constant(x.value.rows(), x.value.cols(), self.grad(0, 0)));
  });
}

Var cross_entropy(const Var& logits, std::span<const int> targets) {
  const Index n = logits.rows();
  const Index c = logits.cols();
  if (static_cast<Index>(targets.size()) != n) throw ShapeError("cross_entropy: one target per row");
  Matrix probs(n, c);
  double total = 0.0;
  for (Index r = 0; r < n; ++r) {
    const int t = targets[static_cast<std::size_t>(r)];
    if (t < 0 || t >= c) throw ShapeError("cross_entropy: target out of range");
    const double mx = logits.value().row(r).maxCoeff();
    const auto shifted = (logits.value().row(r).array() - mx).eval();
    const double lse = std::log(shifted.exp().sum());
    probs.row(r) = (shifted - lse).exp().matrix();
    total += lse - shifted(t);
  }
  Matrix out(1, 1);
  out(0, 0) = total / static_cast<double>(n);
  std::vector<int> tg(targets.begin(), targets.end());
  return make_result(std::move(out), {logits},
                     [probs = std::move(probs), tg = std::move(tg)](Node& self) {
                       Matrix g = probs;
                       for (std::size_t r = 0; r < tg.size(); ++r) g(static_cast<Index>(r), tg[r]) -= 1.0;
                       g *= self.grad(0, 0) / static_cast<double>(tg.size());
                       accumulate(*self.inputs[0], g);
                     });
}

Var dropout(const Var& a, double p, std::mt19937_64& rng) {
  if (p <= 0.0) return a;
  std::bernoulli_distribution keep(1.0 - p);
  Matrix mask(a.rows(), a.cols());
  const double s = 1.0 / (1.0 - p);
  for (Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? s : 0.0;
  Matrix out = a.value().cwiseProduct(mask);
  return make_result(std::move(out), {a}, [mask = std::move(mask)](Node& self) {
    accumulate_expr(*self.inputs[0], self.grad.cwiseProduct(mask));
  });
}

Var& ParamStore::add(const std::string& name, Matrix init) {
  if (contains(name)) throw ValidationError("duplicate parameter name: " + name);
  params_.emplace_back(name, Var(std::move(init), true));
  return params_.back().second;
}

const Var& ParamStore::get(const std::string& name) const {
  for (const auto& [n, v] : params_) {
    if (n == name) return v;
  }
  throw ValidationError("unknown parameter: " + name);
}

Var& ParamStore::get(const std::string& name) {
  return const_cast<Var&>(static_cast<const ParamStore&>(*this).get(name));
}

bool ParamStore::contains(const std::string& name) const {
  for (const auto& [n, v] : params_) {
    if (n == name) return true;
  }
  return false;
}

std::size_t ParamStore::num_scalars() const {
  std::size_t n = 0;
  for (const auto& [name, v] : params_) n += static_cast<std::size_t>(v.value().size());
  return n;
}

void ParamStore::zero_grad() {
  for (auto& [name, v] : params_) v.node()->zero_grad();
}

}  // namespace unishape::ag
