#pragma once

#include <random>
#include <string>
#include <vector>

#include "unishape/autograd.hpp"
#include "unishape/config.hpp"
#include "unishape/nn.hpp"

namespace unishape {

struct EncodedSequence {
  ag::Var class_token;   // 1 x d
  ag::Var shape_tokens;  // N x d
};

/// Pre-norm transformer block: x + Attn(LN(x)), then x + FF(LN(x)).
struct EncoderBlock {
  nn::LayerNorm norm1;
  nn::Linear qkv;
  nn::Linear attn_out;  // residual-branch output projection
  nn::LayerNorm norm2;
  nn::Linear ff_in;
  nn::Linear ff_out;  // residual-branch output projection
};

/// Bidirectional transformer over [class token; shape tokens + positions].
/// Learned positional embeddings are added to the shape tokens only.
class TransformerEncoder {
 public:
  TransformerEncoder() = default;
  TransformerEncoder(ag::ParamStore& store, const std::string& prefix, const ModelConfig& config,
                     std::mt19937_64& rng);

  /// rng is only consulted when train is true and dropout > 0.
  EncodedSequence forward(const ag::Var& class_token, const ag::Var& shape_tokens, bool train = false,
                          std::mt19937_64* rng = nullptr) const;

  std::size_t max_tokens() const { return max_tokens_; }
  const std::vector<EncoderBlock>& blocks() const { return blocks_; }

 private:
  ag::Var block_forward(const EncoderBlock& block, const ag::Var& x, bool train, std::mt19937_64* rng) const;

  ModelConfig config_;
  std::size_t max_tokens_ = 0;
  ag::Var positions_;  // max_tokens x d
  std::vector<EncoderBlock> blocks_;
};

/// Single affine map d -> C.
class ClassificationHead {
 public:
  ClassificationHead() = default;
  ClassificationHead(ag::ParamStore& store, const std::string& prefix, std::size_t dim, int num_classes,
                     std::mt19937_64& rng);

  ag::Var logits(const ag::Var& class_token) const { return layer_(class_token); }
  int num_classes() const { return static_cast<int>(layer_.weight.cols()); }

  /// Re-draws the weights for a new class count (shape may change).
  void reset(int num_classes, std::mt19937_64& rng);

 private:
  nn::Linear layer_;
};

/// argmax over one row; ties resolve to the lowest index.
int argmax_lowest(const ag::Matrix& row);

}  // namespace unishape
