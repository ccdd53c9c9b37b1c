#include "unishape/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "unishape/error.hpp"

namespace unishape {
namespace {

struct Moments {
  double mean = 0.0;
  double std = 0.0;
};

Moments moments(std::span<const double> v) {
  Moments m;
  if (v.empty()) return m;
  m.mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double ss = 0.0;
  for (double x : v) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(v.size()));
  return m;
}

}  // namespace

std::vector<Subsequence> extract_subsequences(std::span<const double> x, std::size_t window,
                                              std::size_t stride) {
  if (window == 0 || stride == 0) throw ValidationError("window and stride must be positive");
  if (window > x.size()) {
    throw ValidationError("window length " + std::to_string(window) + " exceeds series length " +
                          std::to_string(x.size()));
  }
  std::vector<Subsequence> out;
  out.reserve((x.size() - window) / stride + 1);
  for (std::size_t start = 0; start + window <= x.size(); start += stride) {
    out.push_back({{start, start + window - 1},
                   std::vector<double>(x.begin() + static_cast<std::ptrdiff_t>(start),
                                       x.begin() + static_cast<std::ptrdiff_t>(start + window))});
  }
  return out;
}

std::vector<double> first_difference(std::span<const double> x) {
  std::vector<double> d(x.size(), 0.0);
  for (std::size_t i = 0; i + 1 < x.size(); ++i) d[i] = x[i + 1] - x[i];
  return d;
}

std::vector<WindowFeatures> compute_window_features(std::span<const double> x, std::size_t window,
                                                    std::size_t stride) {
  const auto subs = extract_subsequences(x, window, stride);
  const std::vector<double> dx = first_difference(x);
  const Moments global = moments(x);
  const Moments global_diff = moments(dx);
  const double sigma = std::max(global.std, kStdFloor);
  const double dsigma = std::max(global_diff.std, kStdFloor);

  std::vector<WindowFeatures> out;
  out.reserve(subs.size());
  for (const auto& sub : subs) {
    WindowFeatures f;
    f.span = sub.span;
    f.normalized_window.resize(window);
    f.normalized_diff_window.resize(window);
    for (std::size_t i = 0; i < window; ++i) {
      f.normalized_window[i] = (sub.values[i] - global.mean) / sigma;
      f.normalized_diff_window[i] = (dx[sub.span.start + i] - global_diff.mean) / dsigma;
    }
    const Moments local = moments(sub.values);
    f.local_mean = local.mean;
    f.local_std = local.std;
    out.push_back(std::move(f));
  }
  return out;
}

std::array<double, kNumericFeatures> numeric_features(double v) {
  if (!std::isfinite(v)) throw ValidationError("numeric embedding input is not finite");
  std::array<double, kNumericFeatures> f{};
  for (int k = kNumericMinExp; k <= kNumericMaxExp; ++k) {
    f[static_cast<std::size_t>(k - kNumericMinExp)] = std::clamp(std::ldexp(v, k), -1.0, 1.0);
  }
  return f;
}

NumericEmbedding::NumericEmbedding(ag::ParamStore& store, const std::string& prefix, std::size_t dim,
                                   std::mt19937_64& rng)
    : proj(store, prefix, static_cast<ag::Index>(kNumericFeatures), static_cast<ag::Index>(dim), rng) {}

ag::Var NumericEmbedding::operator()(std::span<const double> values) const {
  ag::Matrix feats(static_cast<ag::Index>(values.size()), static_cast<ag::Index>(kNumericFeatures));
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto f = numeric_features(values[i]);
    for (std::size_t k = 0; k < kNumericFeatures; ++k) feats(static_cast<ag::Index>(i), static_cast<ag::Index>(k)) = f[k];
  }
  return proj(ag::constant(std::move(feats)));
}

Eigen::VectorXd ShapeTokenBatch::shape_scores() const {
  if (!has_class_slot) return scores;
  return scores.tail(scores.size() - 1);
}

std::vector<Eigen::VectorXd> AdapterOutput::per_scale_scores() const {
  std::vector<Eigen::VectorXd> out;
  out.reserve(scales.size());
  for (const auto& s : scales) out.push_back(s.scores);
  return out;
}

ShapeAdapter::ShapeAdapter(ag::ParamStore& store, const std::string& prefix, const ModelConfig& config,
                           std::mt19937_64& rng)
    : config_(config) {
  const auto d = static_cast<ag::Index>(config.dim);
  value_conv_ = nn::Conv1d(store, prefix + ".value_conv", 1, d, kWindowKernel, rng);
  diff_conv_ = nn::Conv1d(store, prefix + ".diff_conv", 1, d, kWindowKernel, rng);
  numeric_ = NumericEmbedding(store, prefix + ".numeric", config.dim, rng);
  token_proj_ = nn::Linear(store, prefix + ".token_proj", 4 * d, d, rng);
  for (std::size_t i = 0; i < kTrunkKernels.size(); ++i) {
    trunk_convs_[i] = nn::Conv1d(store, prefix + ".trunk.conv" + std::to_string(kTrunkKernels[i]), d, d,
                                 kTrunkKernels[i], rng);
  }
  trunk_proj_ = nn::Linear(store, prefix + ".trunk.proj", 3 * d, d, rng);
  attn_hidden_ = nn::Linear(store, prefix + ".attn.hidden", d, static_cast<ag::Index>(config.attention_hidden()), rng);
  attn_out_ = nn::Linear(store, prefix + ".attn.out", static_cast<ag::Index>(config.attention_hidden()), 1, rng);
}

ag::Var ShapeAdapter::embed_shape_tokens(std::span<const WindowFeatures> windows) const {
  if (windows.empty()) throw ValidationError("embed_shape_tokens: no windows");
  const std::size_t w = windows.front().normalized_window.size();
  const auto n = static_cast<ag::Index>(windows.size());
  ag::Matrix values(n * static_cast<ag::Index>(w), 1);
  ag::Matrix diffs(n * static_cast<ag::Index>(w), 1);
  std::vector<double> means;
  std::vector<double> stds;
  means.reserve(windows.size());
  stds.reserve(windows.size());
  for (std::size_t i = 0; i < windows.size(); ++i) {
    const auto& f = windows[i];
    if (f.normalized_window.size() != w || f.normalized_diff_window.size() != w) {
      throw ValidationError("embed_shape_tokens: windows of one batch must share a length");
    }
    for (std::size_t t = 0; t < w; ++t) {
      values(static_cast<ag::Index>(i * w + t), 0) = f.normalized_window[t];
      diffs(static_cast<ag::Index>(i * w + t), 0) = f.normalized_diff_window[t];
    }
    means.push_back(f.local_mean);
    stds.push_back(f.local_std);
  }
  const auto seg = static_cast<ag::Index>(w);
  ag::Var h = ag::segment_mean(ag::gelu(value_conv_(ag::constant(std::move(values)), seg)), seg);
  ag::Var g = ag::segment_mean(ag::gelu(diff_conv_(ag::constant(std::move(diffs)), seg)), seg);
  const std::array<ag::Var, 4> parts = {h, g, numeric_(means), numeric_(stds)};
  return token_proj_(ag::hconcat(parts));
}

ag::Var ShapeAdapter::embed_shape_token(const WindowFeatures& window) const {
  return embed_shape_tokens(std::span<const WindowFeatures>(&window, 1));
}

ag::Var ShapeAdapter::trunk(const ag::Var& tokens) const {
  std::array<ag::Var, 3> branches;
  for (std::size_t i = 0; i < branches.size(); ++i) branches[i] = trunk_convs_[i](tokens);
  return ag::add(tokens, trunk_proj_(ag::gelu(ag::hconcat(branches))));
}

AttentionPool ShapeAdapter::attention_pool(const ag::Var& tokens) const {
  if (tokens.rows() < 1) throw ValidationError("attention_pool: empty token set");
  ag::Var scores = ag::sigmoid(attn_out_(ag::tanh(attn_hidden_(tokens))));
  ag::Var pooled = ag::matmul(ag::transpose(scores), tokens);
  return {pooled, scores};
}

AdapterOutput ShapeAdapter::forward(std::span<const double> x) const {
  if (x.size() != config_.series_length) {
    throw ValidationError("adapter input length " + std::to_string(x.size()) + " != configured T " +
                          std::to_string(config_.series_length));
  }
  AdapterOutput out;
  ag::Var previous;
  for (std::size_t q = 0; q < config_.scales.num_scales(); ++q) {
    const auto& win = config_.scales.windows[q];
    const auto features = compute_window_features(x, win.length, win.stride);
    ag::Var tokens = embed_shape_tokens(features);
    const bool has_class_slot = q > 0;
    if (has_class_slot) {
      const std::array<ag::Var, 2> parts = {previous, tokens};
      tokens = ag::vconcat(parts);
    }
    ag::Var mixed = trunk(tokens);
    AttentionPool pool = attention_pool(mixed);

    ShapeTokenBatch batch;
    batch.tokens = mixed;
    batch.scores = Eigen::Map<const Eigen::VectorXd>(pool.scores.value().data(), pool.scores.rows());
    batch.scale_index = q;
    batch.has_class_slot = has_class_slot;
    batch.spans.reserve(features.size());
    for (const auto& f : features) batch.spans.push_back(f.span);
    out.scales.push_back(std::move(batch));
    out.class_tokens.push_back(pool.class_token);

    if (q + 1 == config_.scales.num_scales()) {
      const auto n = static_cast<ag::Index>(features.size());
      const ag::Index first = has_class_slot ? 1 : 0;
      out.final_shape_tokens = ag::slice_rows(mixed, first, n);
      out.final_shape_scores = ag::slice_rows(pool.scores, first, n);
    }
    previous = pool.class_token;
  }
  out.class_token = previous;
  return out;
}

}  // namespace unishape
