#include "unishape/config.hpp"

#include <sstream>

#include "unishape/error.hpp"

namespace unishape {

ScaleConfig ScaleConfig::defaults() {
  ScaleConfig s;
  for (std::size_t w : {64, 32, 16, 8, 4}) s.windows.push_back({w, w});
  return s;
}

ScaleConfig ScaleConfig::parse(const std::string& text) {
  ScaleConfig s;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) throw ValidationError("empty entry in scale list '" + text + "'");
    const auto colon = item.find(':');
    try {
      std::size_t used = 0;
      WindowSpec w;
      w.length = std::stoul(item.substr(0, colon), &used);
      if (used != (colon == std::string::npos ? item.size() : colon)) throw std::invalid_argument(item);
      w.stride = w.length;
      if (colon != std::string::npos) {
        const std::string stride = item.substr(colon + 1);
        w.stride = std::stoul(stride, &used);
        if (used != stride.size()) throw std::invalid_argument(item);
      }
      s.windows.push_back(w);
    } catch (const std::logic_error&) {
      throw ValidationError("bad scale entry '" + item + "' in '" + text + "'");
    }
  }
  if (s.windows.empty()) throw ValidationError("scale list is empty");
  return s;
}

std::size_t ScaleConfig::tokens_at(std::size_t q, std::size_t series_length) const {
  const auto& w = windows.at(q);
  return (series_length - w.length) / w.stride + 1;
}

void ScaleConfig::validate(std::size_t series_length) const {
  if (windows.empty()) throw ValidationError("at least one scale is required");
  for (std::size_t q = 0; q < windows.size(); ++q) {
    const auto& w = windows[q];
    if (w.length < 1 || w.length > series_length) {
      throw ValidationError("window length " + std::to_string(w.length) + " outside [1, T]");
    }
    if (w.stride < 1 || w.stride > w.length) {
      throw ValidationError("stride " + std::to_string(w.stride) + " outside [1, W]");
    }
    if (q > 0 && windows[q - 1].length <= w.length) {
      throw ValidationError("window lengths must be strictly decreasing (coarse to fine)");
    }
  }
}

void ModelConfig::validate() const {
  scales.validate(series_length);
  if (dim < 2) throw ValidationError("model dim must be >= 2");
  if (heads < 1 || dim % heads != 0) throw ValidationError("model dim must be divisible by heads");
  if (ff_dim < 1 || proj_dim < 1) throw ValidationError("ff_dim and proj_dim must be positive");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ValidationError("dropout must lie in [0, 1)");
}

void ContrastiveConfig::validate() const {
  if (!(tau > 0.0)) throw ValidationError("tau must be > 0");
  if (!(epsilon > 0.0 && epsilon <= 1.0)) throw ValidationError("epsilon must lie in (0, 1]");
  if (!(lambda > 0.0 && lambda < 1.0)) throw ValidationError("lambda must lie in (0, 1)");
}

TrainConfig TrainConfig::pretrain_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::finetune_defaults() {
  TrainConfig c;
  c.epochs = 300;
  c.batch_size = 16;
  c.learning_rate = 1e-4;
  return c;
}

void TrainConfig::validate() const {
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be > 0");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
  if (!(key_momentum >= 0.0 && key_momentum <= 1.0)) throw ValidationError("key momentum must lie in [0, 1]");
  if (!(proto_momentum > 0.0 && proto_momentum < 1.0)) throw ValidationError("prototype beta must lie in (0, 1)");
  if (!(mu >= 0.0)) throw ValidationError("mu must be >= 0");
  if (!(label_ratio >= 0.0 && label_ratio <= 1.0)) throw ValidationError("label_ratio must lie in [0, 1]");
  contrastive.validate();
}

void to_json(nlohmann::json& j, const WindowSpec& w) { j = {{"length", w.length}, {"stride", w.stride}}; }

void from_json(const nlohmann::json& j, WindowSpec& w) {
  j.at("length").get_to(w.length);
  j.at("stride").get_to(w.stride);
}

void to_json(nlohmann::json& j, const ScaleConfig& s) { j = s.windows; }
void from_json(const nlohmann::json& j, ScaleConfig& s) { j.get_to(s.windows); }

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"series_length", c.series_length}, {"scales", c.scales}, {"dim", c.dim},
       {"depth", c.depth}, {"heads", c.heads}, {"ff_dim", c.ff_dim},
       {"dropout", c.dropout}, {"proj_dim", c.proj_dim}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("series_length").get_to(c.series_length);
  j.at("scales").get_to(c.scales);
  j.at("dim").get_to(c.dim);
  j.at("depth").get_to(c.depth);
  j.at("heads").get_to(c.heads);
  j.at("ff_dim").get_to(c.ff_dim);
  j.at("dropout").get_to(c.dropout);
  j.at("proj_dim").get_to(c.proj_dim);
}

void to_json(nlohmann::json& j, const ContrastiveConfig& c) {
  j = {{"tau", c.tau}, {"epsilon", c.epsilon}, {"lambda", c.lambda}};
}

void from_json(const nlohmann::json& j, ContrastiveConfig& c) {
  j.at("tau").get_to(c.tau);
  j.at("epsilon").get_to(c.epsilon);
  j.at("lambda").get_to(c.lambda);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"weight_decay", c.weight_decay},
       {"key_momentum", c.key_momentum},
       {"proto_momentum", c.proto_momentum},
       {"seed", c.seed},
       {"contrastive", c.contrastive},
       {"mu", c.mu},
       {"label_ratio", c.label_ratio},
       {"pseudo_label_updates", c.pseudo_label_updates}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  j.at("epochs").get_to(c.epochs);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("weight_decay").get_to(c.weight_decay);
  j.at("key_momentum").get_to(c.key_momentum);
  j.at("proto_momentum").get_to(c.proto_momentum);
  j.at("seed").get_to(c.seed);
  j.at("contrastive").get_to(c.contrastive);
  j.at("mu").get_to(c.mu);
  j.at("label_ratio").get_to(c.label_ratio);
  j.at("pseudo_label_updates").get_to(c.pseudo_label_updates);
}

}  // namespace unishape
