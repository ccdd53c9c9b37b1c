#include "unishape/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "unishape/error.hpp"

namespace unishape {
namespace {

constexpr std::uint64_t kPrototypeSeedSalt = 0x9e3779b97f4a7c15ULL;

NamedArray to_array(const std::string& name, const ag::Matrix& m) {
  NamedArray a;
  a.name = name;
  a.shape = {m.rows(), m.cols()};
  a.data.resize(static_cast<std::size_t>(m.size()));
  for (ag::Index i = 0; i < m.size(); ++i) a.data[static_cast<std::size_t>(i)] = static_cast<float>(m.data()[i]);
  return a;
}

ag::Matrix to_matrix(const NamedArray& a) {
  if (a.shape.size() != 2) throw ShapeError(a.name + ": expected a 2-D array");
  ag::Matrix m(a.shape[0], a.shape[1]);
  if (static_cast<std::size_t>(m.size()) != a.data.size()) throw ShapeError(a.name + ": data size mismatch");
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(a.data[static_cast<std::size_t>(i)]);
  return m;
}

void load_into(ag::ParamStore& store, const ModelCheckpoint& ckpt, const std::string& prefix) {
  for (auto& [name, var] : store.entries()) {
    const NamedArray* a = ckpt.find(prefix + name);
    if (!a) throw ValidationError("checkpoint is missing array " + prefix + name);
    ag::Matrix m = to_matrix(*a);
    if (m.rows() != var.rows() || m.cols() != var.cols()) {
      throw ShapeError("checkpoint array " + a->name + " has shape " + std::to_string(m.rows()) + "x" +
                       std::to_string(m.cols()) + ", model expects " + std::to_string(var.rows()) + "x" +
                       std::to_string(var.cols()));
    }
    var.mutable_value() = std::move(m);
  }
}

std::uint32_t to_le(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) {
    v = ((v & 0xffu) << 24) | ((v & 0xff00u) << 8) | ((v >> 8) & 0xff00u) | (v >> 24);
  }
  return v;
}

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace

const NamedArray* ModelCheckpoint::find(const std::string& name) const {
  for (const auto& a : arrays) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

ModelConfig ModelCheckpoint::model_config() const { return config.at("model").get<ModelConfig>(); }

int ModelCheckpoint::num_classes() const { return config.at("num_classes").get<int>(); }

ModelCheckpoint make_checkpoint(const UniShapeNet& query, const UniShapeNet* key, const PrototypeStore& prototypes,
                                const TrainConfig& train, std::uint64_t seed) {
  ModelCheckpoint c;
  c.config = {{"format_version", kCheckpointFormatVersion},
              {"model", query.config()},
              {"train", train},
              {"num_classes", query.num_classes()},
              {"seed", seed}};
  for (const auto& [name, var] : query.params().entries()) c.arrays.push_back(to_array(name, var.value()));
  if (key) {
    for (const auto& [name, var] : key->params().entries()) {
      c.arrays.push_back(to_array(kMomentumPrefix + name, var.value()));
    }
  }
  c.arrays.push_back(to_array(kPrototypesName, prototypes.prototypes));
  return c;
}

ModelState restore_model(const ModelCheckpoint& checkpoint) {
  const int version = checkpoint.config.value("format_version", 0);
  if (version != kCheckpointFormatVersion) {
    throw ValidationError("unsupported checkpoint format_version " + std::to_string(version));
  }
  const ModelConfig config = checkpoint.model_config();
  const auto seed = checkpoint.config.at("seed").get<std::uint64_t>();
  UniShapeNet query(config, checkpoint.num_classes(), seed);
  load_into(query.params(), checkpoint, "");

  std::optional<UniShapeNet> key;
  const bool has_momentum = std::any_of(checkpoint.arrays.begin(), checkpoint.arrays.end(), [](const NamedArray& a) {
    return a.name.rfind(kMomentumPrefix, 0) == 0;
  });
  if (has_momentum) {
    key.emplace(config, checkpoint.num_classes(), seed, UniShapeNet::kProjector);
    load_into(key->params(), checkpoint, kMomentumPrefix);
  }

  const NamedArray* protos = checkpoint.find(kPrototypesName);
  if (!protos) throw ValidationError("checkpoint is missing array prototypes");
  PrototypeStore store;
  store.prototypes = to_matrix(*protos);
  store.update_counts.assign(static_cast<std::size_t>(store.prototypes.rows()), 0);
  if (checkpoint.config.contains("train")) {
    store.beta = checkpoint.config.at("train").at("proto_momentum").get<double>();
  }
  return ModelState{std::move(query), std::move(key), std::move(store)};
}

ModelState init_model(const ModelConfig& config, int num_classes, std::uint64_t seed, double proto_beta) {
  UniShapeNet query(config, num_classes, seed);
  std::optional<UniShapeNet> key;
  key.emplace(config, num_classes, seed, UniShapeNet::kProjector);
  key->copy_parameters_from(query);
  PrototypeStore protos = init_prototypes(num_classes, config.dim, seed ^ kPrototypeSeedSalt, proto_beta);
  return ModelState{std::move(query), std::move(key), std::move(protos)};
}

void save_checkpoint(const ModelCheckpoint& checkpoint, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["dtype"] = "float32-le";
  auto& entries = manifest["arrays"] = nlohmann::json::array();

  std::ofstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw Error("cannot write " + (dir / "weights.bin").string());
  std::uint64_t offset = 0;
  for (const auto& a : checkpoint.arrays) {
    entries.push_back({{"name", a.name}, {"offset", offset}, {"shape", a.shape}});
    std::vector<std::uint32_t> words(a.data.size());
    for (std::size_t i = 0; i < a.data.size(); ++i) words[i] = to_le(std::bit_cast<std::uint32_t>(a.data[i]));
    bin.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
    offset += a.data.size() * 4;
  }
  if (!bin) throw Error("failed writing " + (dir / "weights.bin").string());

  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
  std::ofstream(dir / "config.json") << checkpoint.config.dump(2) << '\n';
}

ModelCheckpoint load_checkpoint(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw Error("checkpoint directory not found: " + dir.string());
  ModelCheckpoint c;
  c.config = read_json(dir / "config.json");
  const nlohmann::json manifest = read_json(dir / "manifest.json");

  std::ifstream bin(dir / "weights.bin", std::ios::binary);
  if (!bin) throw ParseError("cannot open " + (dir / "weights.bin").string());
  std::vector<char> blob((std::istreambuf_iterator<char>(bin)), std::istreambuf_iterator<char>());

  try {
    for (const auto& e : manifest.at("arrays")) {
      NamedArray a;
      a.name = e.at("name").get<std::string>();
      a.shape = e.at("shape").get<std::vector<std::int64_t>>();
      const auto offset = e.at("offset").get<std::uint64_t>();
      std::uint64_t count = 1;
      for (auto s : a.shape) count *= static_cast<std::uint64_t>(s);
      if (offset + count * 4 > blob.size()) throw ParseError("weights.bin too short for array " + a.name);
      a.data.resize(count);
      for (std::uint64_t i = 0; i < count; ++i) {
        std::uint32_t w = 0;
        std::memcpy(&w, blob.data() + offset + i * 4, 4);
        a.data[i] = std::bit_cast<float>(to_le(w));
      }
      c.arrays.push_back(std::move(a));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ParseError((dir / "manifest.json").string() + ": " + e.what());
  }
  return c;
}

std::uint64_t parameter_hash(const ModelCheckpoint& checkpoint) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 1099511628211ULL;
    }
  };
  for (const auto& a : checkpoint.arrays) {
    mix(a.name.data(), a.name.size());
    mix(a.shape.data(), a.shape.size() * sizeof(std::int64_t));
    mix(a.data.data(), a.data.size() * sizeof(float));
  }
  return h;
}

}  // namespace unishape
