#include "unishape/model.hpp"

#include "unishape/error.hpp"

namespace unishape {

Mlp::Mlp(ag::ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
         std::mt19937_64& rng)
    : first(store, prefix + ".fc1", static_cast<ag::Index>(in), static_cast<ag::Index>(hidden), rng),
      second(store, prefix + ".fc2", static_cast<ag::Index>(hidden), static_cast<ag::Index>(out), rng) {}

UniShapeNet::UniShapeNet(const ModelConfig& config, int num_classes, std::uint64_t seed, unsigned parts)
    : config_(config), parts_(parts), store_(std::make_unique<ag::ParamStore>()) {
  config.validate();
  std::mt19937_64 rng(seed);
  adapter_ = ShapeAdapter(*store_, "adapter", config, rng);
  encoder_ = TransformerEncoder(*store_, "encoder", config, rng);
  if (parts & kProjector) projector_.emplace(*store_, "projector", config.dim, config.dim, config.proj_dim, rng);
  if (parts & kPredictor) predictor_.emplace(*store_, "predictor", config.proj_dim, config.dim, config.proj_dim, rng);
  if (parts & kHead) head_.emplace(*store_, "head", config.dim, num_classes, rng);
}

BackboneOutput UniShapeNet::forward_backbone(std::span<const double> x, bool train, std::mt19937_64* rng) const {
  BackboneOutput out;
  out.adapter = adapter_.forward(x);
  out.encoded = encoder_.forward(out.adapter.class_token, out.adapter.final_shape_tokens, train, rng);
  return out;
}

ag::Var UniShapeNet::project(const ag::Var& class_token) const {
  if (!projector_) throw ValidationError("network has no projector");
  return (*projector_)(class_token);
}

ag::Var UniShapeNet::predict(const ag::Var& projected) const {
  if (!predictor_) throw ValidationError("network has no predictor");
  return (*predictor_)(projected);
}

ag::Var UniShapeNet::logits(const ag::Var& class_token) const {
  if (!head_) throw ValidationError("network has no classification head");
  return head_->logits(class_token);
}

Eigen::RowVectorXd UniShapeNet::embed(std::span<const double> x) const {
  ag::NoGradGuard no_grad;
  return forward_backbone(x).encoded.class_token.value().row(0);
}

int UniShapeNet::classify(std::span<const double> x) const {
  ag::NoGradGuard no_grad;
  return argmax_lowest(logits(forward_backbone(x).encoded.class_token).value());
}

void UniShapeNet::reset_head(int num_classes, std::uint64_t seed) {
  if (!head_) throw ValidationError("network has no classification head");
  std::mt19937_64 rng(seed);
  head_->reset(num_classes, rng);
}

int UniShapeNet::num_classes() const { return head_ ? head_->num_classes() : 0; }

void UniShapeNet::copy_parameters_from(const UniShapeNet& other) {
  for (auto& [name, var] : store_->entries()) {
    if (!other.params().contains(name)) continue;
    const auto& src = other.params().get(name).value();
    var.mutable_value() = src;
  }
}

void momentum_step(const ag::ParamStore& query, ag::ParamStore& key, double m) {
  for (auto& [name, var] : key.entries()) {
    const auto& q = query.get(name).value();
    auto& k = var.mutable_value();
    if (q.rows() != k.rows() || q.cols() != k.cols()) {
      throw ShapeError("momentum_step: shape mismatch for " + name);
    }
    k = m * k + (1.0 - m) * q;
  }
}

}  // namespace unishape
