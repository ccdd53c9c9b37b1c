#pragma once

// Shape-aware adapter: multi-scale windowing, shape-token embedding, the
// convolutional trunk, gated attention pooling and coarse-to-fine fusion of
// class tokens. One parameter set serves every scale.

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "unishape/autograd.hpp"
#include "unishape/config.hpp"
#include "unishape/nn.hpp"

namespace unishape {

/// Inclusive time-index range [start, end].
struct TimeSpan {
  std::size_t start = 0;
  std::size_t end = 0;
  bool operator==(const TimeSpan&) const = default;
};

struct Subsequence {
  TimeSpan span;
  std::vector<double> values;
};

/// Windows starting at 0, K, 2K, ...; trailing steps without a full window
/// are dropped. Throws ValidationError if W > T, W == 0 or K == 0.
std::vector<Subsequence> extract_subsequences(std::span<const double> x, std::size_t window,
                                              std::size_t stride);

inline constexpr double kStdFloor = 1e-8;

struct WindowFeatures {
  std::vector<double> normalized_window;       // (s - mu) / sigma, whole-series stats
  std::vector<double> normalized_diff_window;  // (ds - dmu) / dsigma
  double local_mean = 0.0;
  double local_std = 0.0;  // population std of the raw window
  TimeSpan span;
};

/// First-order differential [x2 - x1, ..., xT - xT-1, 0].
std::vector<double> first_difference(std::span<const double> x);

std::vector<WindowFeatures> compute_window_features(std::span<const double> x, std::size_t window,
                                                    std::size_t stride);

inline constexpr int kNumericMinExp = -8;
inline constexpr int kNumericMaxExp = 8;
inline constexpr std::size_t kNumericFeatures = kNumericMaxExp - kNumericMinExp + 1;

/// clip(v * 2^k, -1, 1) for k = -8..8. Throws ValidationError for non-finite v.
std::array<double, kNumericFeatures> numeric_features(double v);

/// Multi-scale numeric embedding: numeric_features followed by a learned
/// affine map to the model dimension.
struct NumericEmbedding {
  nn::Linear proj;

  NumericEmbedding() = default;
  NumericEmbedding(ag::ParamStore& store, const std::string& prefix, std::size_t dim, std::mt19937_64& rng);
  /// One output row per value.
  ag::Var operator()(std::span<const double> values) const;
};

struct AttentionPool {
  ag::Var class_token;  // 1 x d
  ag::Var scores;       // n x 1, sigmoid-gated, in token order
};

struct ShapeTokenBatch {
  ag::Var tokens;             // pooled set (class slot first when has_class_slot)
  Eigen::VectorXd scores;     // one per pooled token
  std::size_t scale_index = 0;
  std::vector<TimeSpan> spans;  // one per shape token (class slot excluded)
  bool has_class_slot = false;

  std::size_t num_shape_tokens() const { return spans.size(); }
  /// Scores of the shape tokens only.
  Eigen::VectorXd shape_scores() const;
};

struct AdapterOutput {
  ag::Var class_token;          // c^(Q), 1 x d
  ag::Var final_shape_tokens;   // scale-Q trunk outputs without the class slot, N_Q x d
  ag::Var final_shape_scores;   // N_Q x 1, attention scores of those tokens
  std::vector<ShapeTokenBatch> scales;    // q = 1..Q
  std::vector<ag::Var> class_tokens;      // c^(1) .. c^(Q)

  std::vector<Eigen::VectorXd> per_scale_scores() const;
};

class ShapeAdapter {
 public:
  ShapeAdapter() = default;
  ShapeAdapter(ag::ParamStore& store, const std::string& prefix, const ModelConfig& config,
               std::mt19937_64& rng);

  /// Shape tokens (Linear([h, g, e(mu), e(sigma)])) for a batch of windows.
  ag::Var embed_shape_tokens(std::span<const WindowFeatures> windows) const;
  /// Single-window convenience wrapper around embed_shape_tokens.
  ag::Var embed_shape_token(const WindowFeatures& window) const;

  /// Three parallel token-axis convolutions, concatenated, projected back to
  /// d and added residually.
  ag::Var trunk(const ag::Var& tokens) const;

  /// alpha_i = sigmoid(w2 . tanh(W1 z_i + b1) + b2); c = sum_i alpha_i z_i.
  AttentionPool attention_pool(const ag::Var& tokens) const;

  AdapterOutput forward(std::span<const double> x) const;

  const ModelConfig& config() const { return config_; }

 private:
  ModelConfig config_;
  nn::Conv1d value_conv_;
  nn::Conv1d diff_conv_;
  NumericEmbedding numeric_;
  nn::Linear token_proj_;
  std::array<nn::Conv1d, 3> trunk_convs_;
  nn::Linear trunk_proj_;
  nn::Linear attn_hidden_;
  nn::Linear attn_out_;
};

inline constexpr std::array<int, 3> kTrunkKernels = {3, 5, 9};
inline constexpr int kWindowKernel = 3;

}  // namespace unishape
