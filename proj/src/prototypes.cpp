#include "unishape/prototypes.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <random>

#include "unishape/error.hpp"

namespace unishape {
namespace {

void check_tau(double tau) {
  if (!(tau > 0.0)) throw ValidationError("temperature tau must be > 0");
}

void check_target(const PrototypeStore& store, int target) {
  if (target < 0 || target >= store.num_classes()) {
    throw ValidationError("class id " + std::to_string(target) + " outside [0, " +
                          std::to_string(store.num_classes()) + ")");
  }
}

}  // namespace

PrototypeStore init_prototypes(int num_classes, std::size_t dim, std::uint64_t seed, double beta) {
  if (num_classes < 1 || dim < 1) throw ValidationError("init_prototypes: need C >= 1 and d >= 1");
  PrototypeStore store;
  store.beta = beta;
  store.prototypes.resize(num_classes, static_cast<ag::Index>(dim));
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (ag::Index i = 0; i < store.prototypes.size(); ++i) store.prototypes.data()[i] = dist(rng);
  store.update_counts.assign(static_cast<std::size_t>(num_classes), 0);
  return store;
}

void ema_update(PrototypeStore& store, int class_id, std::span<const double> class_token) {
  check_target(store, class_id);
  if (class_token.size() != store.dim()) throw ShapeError("ema_update: token dimension mismatch");
  auto row = store.prototypes.row(class_id);
  for (std::size_t k = 0; k < class_token.size(); ++k) {
    const auto kk = static_cast<ag::Index>(k);
    row(kk) = store.beta * row(kk) + (1.0 - store.beta) * class_token[k];
  }
  ++store.update_counts[static_cast<std::size_t>(class_id)];
}

int pseudo_label(const PrototypeStore& store, std::span<const double> class_token) {
  if (class_token.size() != store.dim()) throw ShapeError("pseudo_label: token dimension mismatch");
  const Eigen::Map<const Eigen::RowVectorXd> c(class_token.data(), static_cast<ag::Index>(class_token.size()));
  const double cn = c.norm();
  int best = 0;
  double best_sim = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < store.num_classes(); ++j) {
    const double pn = store.prototypes.row(j).norm();
    double sim = -1.0;
    if (cn > 0.0 && pn > 0.0) {
      sim = c.dot(store.prototypes.row(j)) / (cn * pn);
    } else {
      std::cerr << "warning: cosine similarity undefined for a zero-norm vector (class " << j
                << "); using -1\n";
    }
    if (sim > best_sim) {
      best_sim = sim;
      best = j;
    }
  }
  return best;
}

ag::Var prototype_logits(const ag::Var& tokens, const PrototypeStore& store, double tau) {
  check_tau(tau);
  if (static_cast<std::size_t>(tokens.cols()) != store.dim()) {
    throw ShapeError("prototype_logits: token dimension mismatch");
  }
  ag::Matrix normalized = store.prototypes;
  for (ag::Index j = 0; j < normalized.rows(); ++j) {
    const double n = normalized.row(j).norm();
    normalized.row(j) /= std::max(n, 1e-12);
  }
  return ag::scale(ag::matmul(ag::l2_normalize_rows(tokens), ag::constant(normalized.transpose())), 1.0 / tau);
}

ag::Var instance_loss(const ag::Var& class_token, const PrototypeStore& store, int target_class, double tau) {
  check_target(store, target_class);
  if (class_token.rows() != 1) throw ShapeError("instance_loss: expected a single class token");
  const int targets[] = {target_class};
  return ag::cross_entropy(prototype_logits(class_token, store, tau), targets);
}

std::vector<ag::Index> select_top_tokens(std::span<const double> scores, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in (0, 1]");
  if (scores.empty()) throw ValidationError("select_top_tokens: no scores");
  const auto n = scores.size();
  auto k = static_cast<std::size_t>(std::ceil(epsilon * static_cast<double>(n) - 1e-9));
  k = std::clamp<std::size_t>(k, 1, n);
  std::vector<ag::Index> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ag::Index a, ag::Index b) {
    return scores[static_cast<std::size_t>(a)] > scores[static_cast<std::size_t>(b)];
  });
  order.resize(k);
  return order;
}

ag::Var shape_loss(const ag::Var& shape_tokens, std::span<const double> scores, const PrototypeStore& store,
                   int target_class, double tau, double epsilon) {
  check_tau(tau);
  check_target(store, target_class);
  if (static_cast<ag::Index>(scores.size()) != shape_tokens.rows()) {
    throw ShapeError("shape_loss: one score per shape token required");
  }
  const auto top = select_top_tokens(scores, epsilon);
  ag::Var selected = ag::gather_rows(shape_tokens, top);
  const std::vector<int> targets(top.size(), target_class);
  return ag::cross_entropy(prototype_logits(selected, store, tau), targets);
}

ag::Var proto_loss(const ag::Var& l_ins, const ag::Var& l_shape, double lambda) {
  return ag::add(ag::scale(l_ins, 1.0 - lambda), ag::scale(l_shape, lambda));
}

double proto_loss(double l_ins, double l_shape, double lambda) {
  return (1.0 - lambda) * l_ins + lambda * l_shape;
}

}  // namespace unishape
