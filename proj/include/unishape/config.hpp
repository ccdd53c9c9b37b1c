#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace unishape {

struct WindowSpec {
  std::size_t length = 0;  // W_q
  std::size_t stride = 0;  // K_q
  bool operator==(const WindowSpec&) const = default;
};

/// Sliding-window scales ordered coarse to fine.
struct ScaleConfig {
  std::vector<WindowSpec> windows;

  static ScaleConfig defaults();  // W = K in {64, 32, 16, 8, 4}
  /// Parses "64,32,16" (stride = length) or "64:32,16:16" (length:stride).
  static ScaleConfig parse(const std::string& text);

  std::size_t num_scales() const { return windows.size(); }
  /// floor((T - W) / K) + 1 for scale q.
  std::size_t tokens_at(std::size_t q, std::size_t series_length) const;
  void validate(std::size_t series_length) const;
  bool operator==(const ScaleConfig&) const = default;
};

struct ModelConfig {
  std::size_t series_length = 512;
  ScaleConfig scales = ScaleConfig::defaults();
  std::size_t dim = 256;
  std::size_t depth = 4;
  std::size_t heads = 8;
  std::size_t ff_dim = 512;
  double dropout = 0.1;
  std::size_t proj_dim = 128;

  std::size_t attention_hidden() const { return dim / 2 > 0 ? dim / 2 : 1; }
  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct ContrastiveConfig {
  double tau = 0.2;
  double epsilon = 0.6;
  double lambda = 0.01;

  void validate() const;
  bool operator==(const ContrastiveConfig&) const = default;
};

struct TrainConfig {
  int epochs = 30;
  int batch_size = 128;
  double learning_rate = 1e-3;
  double weight_decay = 1e-5;
  double key_momentum = 0.99;  // momentum-encoder EMA
  double proto_momentum = 0.9;  // prototype EMA (beta)
  std::uint64_t seed = 0;
  ContrastiveConfig contrastive;
  double mu = 0.01;  // fine-tuning weight of the shape loss
  double label_ratio = 0.1;
  bool pseudo_label_updates = false;  // let unlabeled samples drive prototype EMA

  static TrainConfig pretrain_defaults();
  static TrainConfig finetune_defaults();
  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const WindowSpec& w);
void from_json(const nlohmann::json& j, WindowSpec& w);
void to_json(nlohmann::json& j, const ScaleConfig& s);
void from_json(const nlohmann::json& j, ScaleConfig& s);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const ContrastiveConfig& c);
void from_json(const nlohmann::json& j, ContrastiveConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace unishape
