#pragma once

// On-disk layout of a checkpoint directory:
//   config.json    resolved configuration (model, train, format_version, seed)
//   manifest.json  {"format_version", "arrays": [{"name", "offset", "shape"}]}
//   weights.bin    little-endian float32 values, arrays back to back
// Query parameters keep their own names, momentum copies are prefixed with
// "momentum." and the prototype matrix is stored as "prototypes".

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unishape/config.hpp"
#include "unishape/model.hpp"
#include "unishape/prototypes.hpp"

namespace unishape {

inline constexpr int kCheckpointFormatVersion = 1;
inline constexpr const char* kMomentumPrefix = "momentum.";
inline constexpr const char* kPrototypesName = "prototypes";

struct NamedArray {
  std::string name;
  std::vector<std::int64_t> shape;  // rows, cols
  std::vector<float> data;          // row-major

  bool operator==(const NamedArray&) const = default;
};

struct ModelCheckpoint {
  nlohmann::json config;  // {"format_version", "model", "train", "num_classes", "seed"}
  std::vector<NamedArray> arrays;

  const NamedArray* find(const std::string& name) const;
  ModelConfig model_config() const;
  int num_classes() const;
  bool operator==(const ModelCheckpoint&) const = default;
};

/// Everything a trainer or evaluator needs, rebuilt from a checkpoint.
struct ModelState {
  UniShapeNet query;
  std::optional<UniShapeNet> key;
  PrototypeStore prototypes;
};

ModelCheckpoint make_checkpoint(const UniShapeNet& query, const UniShapeNet* key, const PrototypeStore& prototypes,
                                const TrainConfig& train, std::uint64_t seed);
ModelState restore_model(const ModelCheckpoint& checkpoint);

/// Freshly initialized model for `num_classes` pretraining classes.
ModelState init_model(const ModelConfig& config, int num_classes, std::uint64_t seed, double proto_beta = 0.9);

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& dir);
ModelCheckpoint load_checkpoint(const std::filesystem::path& dir);

/// FNV-1a over names, shapes and raw float bytes.
std::uint64_t parameter_hash(const ModelCheckpoint& checkpoint);

}  // namespace unishape
