#include "unishape/encoder.hpp"

#include <cmath>

#include "unishape/error.hpp"

namespace unishape {

TransformerEncoder::TransformerEncoder(ag::ParamStore& store, const std::string& prefix,
                                       const ModelConfig& config, std::mt19937_64& rng)
    : config_(config) {
  config.validate();
  const auto d = static_cast<ag::Index>(config.dim);
  const std::size_t last = config.scales.num_scales() - 1;
  max_tokens_ = config.scales.tokens_at(last, config.series_length);
  positions_ = store.add(prefix + ".positions", nn::normal(static_cast<ag::Index>(max_tokens_), d, 0.02, rng));
  for (std::size_t i = 0; i < config.depth; ++i) {
    const std::string p = prefix + ".block" + std::to_string(i);
    EncoderBlock b;
    b.norm1 = nn::LayerNorm(store, p + ".norm1", d);
    b.qkv = nn::Linear(store, p + ".qkv", d, 3 * d, rng);
    b.attn_out = nn::Linear(store, p + ".attn_out", d, d, rng);
    b.norm2 = nn::LayerNorm(store, p + ".norm2", d);
    b.ff_in = nn::Linear(store, p + ".ff_in", d, static_cast<ag::Index>(config.ff_dim), rng);
    b.ff_out = nn::Linear(store, p + ".ff_out", static_cast<ag::Index>(config.ff_dim), d, rng);
    blocks_.push_back(std::move(b));
  }
}

ag::Var TransformerEncoder::block_forward(const EncoderBlock& block, const ag::Var& x, bool train,
                                          std::mt19937_64* rng) const {
  const auto d = static_cast<ag::Index>(config_.dim);
  const auto heads = static_cast<ag::Index>(config_.heads);
  const ag::Index dh = d / heads;
  const double p = train && rng ? config_.dropout : 0.0;

  ag::Var qkv = block.qkv(block.norm1(x));
  std::vector<ag::Var> head_out;
  head_out.reserve(static_cast<std::size_t>(heads));
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (ag::Index h = 0; h < heads; ++h) {
    ag::Var q = ag::slice_cols(qkv, h * dh, dh);
    ag::Var k = ag::slice_cols(qkv, d + h * dh, dh);
    ag::Var v = ag::slice_cols(qkv, 2 * d + h * dh, dh);
    ag::Var weights = ag::softmax_rows(ag::scale(ag::matmul(q, ag::transpose(k)), inv_sqrt));
    head_out.push_back(ag::matmul(weights, v));
  }
  ag::Var attn = block.attn_out(heads == 1 ? head_out.front() : ag::hconcat(head_out));
  if (p > 0.0) attn = ag::dropout(attn, p, *rng);
  ag::Var h1 = ag::add(x, attn);

  ag::Var ff = block.ff_out(ag::gelu(block.ff_in(block.norm2(h1))));
  if (p > 0.0) ff = ag::dropout(ff, p, *rng);
  return ag::add(h1, ff);
}

EncodedSequence TransformerEncoder::forward(const ag::Var& class_token, const ag::Var& shape_tokens, bool train,
                                            std::mt19937_64* rng) const {
  const auto d = static_cast<ag::Index>(config_.dim);
  if (class_token.rows() != 1 || class_token.cols() != d || shape_tokens.cols() != d) {
    throw ShapeError("encoder: expected model dimension " + std::to_string(d));
  }
  const ag::Index n = shape_tokens.rows();
  if (n > static_cast<ag::Index>(max_tokens_)) {
    throw ShapeError("encoder: " + std::to_string(n) + " shape tokens exceed the positional table (" +
                     std::to_string(max_tokens_) + ")");
  }
  ag::Var positioned = ag::add(shape_tokens, ag::slice_rows(positions_, 0, n));
  const std::array<ag::Var, 2> parts = {class_token, positioned};
  ag::Var x = ag::vconcat(parts);
  for (const auto& block : blocks_) x = block_forward(block, x, train, rng);
  return {ag::slice_rows(x, 0, 1), ag::slice_rows(x, 1, n)};
}

ClassificationHead::ClassificationHead(ag::ParamStore& store, const std::string& prefix, std::size_t dim,
                                       int num_classes, std::mt19937_64& rng) {
  if (num_classes < 2) throw ValidationError("classification head needs at least 2 classes");
  layer_ = nn::Linear(store, prefix, static_cast<ag::Index>(dim), num_classes, rng);
}

void ClassificationHead::reset(int num_classes, std::mt19937_64& rng) {
  if (num_classes < 2) throw ValidationError("classification head needs at least 2 classes");
  const ag::Index in = layer_.weight.rows();
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  layer_.weight.mutable_value() = nn::uniform(in, num_classes, bound, rng);
  layer_.bias.mutable_value() = nn::uniform(1, num_classes, bound, rng);
}

int argmax_lowest(const ag::Matrix& row) {
  int best = 0;
  for (ag::Index i = 1; i < row.size(); ++i) {
    if (row.data()[i] > row.data()[best]) best = static_cast<int>(i);
  }
  return best;
}

}  // namespace unishape
