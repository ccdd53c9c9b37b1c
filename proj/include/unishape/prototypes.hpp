#pragma once

// Class prototypes and the prototype contrastive losses. Prototypes are
// state, not parameters: they change only through ema_update and enter the
// losses as constants.

#include <cstdint>
#include <span>
#include <vector>

#include "unishape/autograd.hpp"

namespace unishape {

struct PrototypeStore {
  ag::Matrix prototypes;  // C x d
  double beta = 0.9;
  std::vector<std::int64_t> update_counts;

  int num_classes() const { return static_cast<int>(prototypes.rows()); }
  std::size_t dim() const { return static_cast<std::size_t>(prototypes.cols()); }
};

/// i.i.d. N(0, 1/d) components, so E||p||^2 = 1.
PrototypeStore init_prototypes(int num_classes, std::size_t dim, std::uint64_t seed, double beta = 0.9);

/// p_y <- beta p_y + (1 - beta) c'.
void ema_update(PrototypeStore& store, int class_id, std::span<const double> class_token);

/// Nearest prototype by cosine similarity, lowest index on ties. A pair with
/// a zero-norm side scores -1 (a warning is emitted).
int pseudo_label(const PrototypeStore& store, std::span<const double> class_token);

/// cos(token_i, p_c) / tau for every token row and prototype.
ag::Var prototype_logits(const ag::Var& tokens, const PrototypeStore& store, double tau);

/// -log softmax over prototypes at target_class. class_token is 1 x d.
ag::Var instance_loss(const ag::Var& class_token, const PrototypeStore& store, int target_class, double tau);

/// k = ceil(epsilon * N) indices with the highest scores, ties toward the
/// lower index, returned in descending score order.
std::vector<ag::Index> select_top_tokens(std::span<const double> scores, double epsilon);

/// Instance loss averaged over the top-epsilon shape tokens.
ag::Var shape_loss(const ag::Var& shape_tokens, std::span<const double> scores, const PrototypeStore& store,
                   int target_class, double tau, double epsilon);

/// (1 - lambda) l_ins + lambda l_shape.
ag::Var proto_loss(const ag::Var& l_ins, const ag::Var& l_shape, double lambda);
double proto_loss(double l_ins, double l_shape, double lambda);

}  // namespace unishape
