#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <span>

#include "unishape/adapter.hpp"
#include "unishape/autograd.hpp"
#include "unishape/config.hpp"
#include "unishape/encoder.hpp"
#include "unishape/nn.hpp"

namespace unishape {

/// Two-layer MLP with a GELU in between.
struct Mlp {
  nn::Linear first;
  nn::Linear second;

  Mlp() = default;
  Mlp(ag::ParamStore& store, const std::string& prefix, std::size_t in, std::size_t hidden, std::size_t out,
      std::mt19937_64& rng);
  ag::Var operator()(const ag::Var& x) const { return second(ag::gelu(first(x))); }
};

struct BackboneOutput {
  AdapterOutput adapter;
  EncodedSequence encoded;
};

/// Adapter + encoder (+ projector, predictor, classification head).
/// The momentum (key) network is the same class built without predictor
/// and head, so its parameter names are a subset of the query network's.
class UniShapeNet {
 public:
  enum Part : unsigned { kProjector = 1u, kPredictor = 2u, kHead = 4u, kAll = 7u };

  UniShapeNet(const ModelConfig& config, int num_classes, std::uint64_t seed, unsigned parts = kAll);

  UniShapeNet(const UniShapeNet&) = delete;
  UniShapeNet& operator=(const UniShapeNet&) = delete;
  UniShapeNet(UniShapeNet&&) = default;
  UniShapeNet& operator=(UniShapeNet&&) = default;

  BackboneOutput forward_backbone(std::span<const double> x, bool train = false,
                                  std::mt19937_64* rng = nullptr) const;
  ag::Var project(const ag::Var& class_token) const;
  ag::Var predict(const ag::Var& projected) const;
  ag::Var logits(const ag::Var& class_token) const;

  /// Class-token embedding c^(Q)' in evaluation mode (no graph recorded).
  Eigen::RowVectorXd embed(std::span<const double> x) const;
  int classify(std::span<const double> x) const;

  void reset_head(int num_classes, std::uint64_t seed);
  int num_classes() const;

  /// Overwrites every parameter that `other` also has, by name.
  void copy_parameters_from(const UniShapeNet& other);

  const ModelConfig& config() const { return config_; }
  const ShapeAdapter& adapter() const { return adapter_; }
  const TransformerEncoder& encoder() const { return encoder_; }
  ag::ParamStore& params() { return *store_; }
  const ag::ParamStore& params() const { return *store_; }

 private:
  ModelConfig config_;
  unsigned parts_ = 0;
  std::unique_ptr<ag::ParamStore> store_;
  ShapeAdapter adapter_;
  TransformerEncoder encoder_;
  std::optional<Mlp> projector_;
  std::optional<Mlp> predictor_;
  std::optional<ClassificationHead> head_;
};

/// theta_k <- m theta_k + (1 - m) theta_q for every parameter of `key`.
void momentum_step(const ag::ParamStore& query, ag::ParamStore& key, double m);

}  // namespace unishape
