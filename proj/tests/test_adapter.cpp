#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "unishape/adapter.hpp"
#include "unishape/error.hpp"

using namespace unishape;
using namespace unishape::testing;

namespace {

struct Fixture {
  ModelConfig config;
  ag::ParamStore store;
  ShapeAdapter adapter;

  explicit Fixture(ModelConfig c, std::uint64_t seed = 5) : config(std::move(c)) {
    std::mt19937_64 rng(seed);
    adapter = ShapeAdapter(store, "adapter", config, rng);
  }
};

ModelConfig small_config(std::size_t T = 32, const std::string& scales = "16,8,4", std::size_t d = 8) {
  ModelConfig c;
  c.series_length = T;
  c.scales = ScaleConfig::parse(scales);
  c.dim = d;
  c.depth = 1;
  c.heads = 2;
  c.ff_dim = 2 * d;
  return c;
}

// Independent enumeration: every start s with s % K == 0 and s + W <= T.
std::vector<TimeSpan> brute_force_spans(std::size_t T, std::size_t W, std::size_t K) {
  std::vector<TimeSpan> out;
  for (std::size_t s = 0; s < T; ++s) {
    if (s % K == 0 && s + W <= T) out.push_back({s, s + W - 1});
  }
  return out;
}

}  // namespace

TEST_CASE("extract_subsequences examples") {
  const std::vector<double> x{1, 2, 3, 4};
  const auto w = extract_subsequences(x, 2, 1);
  REQUIRE(w.size() == 3);
  CHECK(w[0].values == std::vector<double>{1, 2});
  CHECK(w[1].values == std::vector<double>{2, 3});
  CHECK(w[2].values == std::vector<double>{3, 4});
  CHECK(w[0].span == TimeSpan{0, 1});
  CHECK(w[2].span == TimeSpan{2, 3});

  std::mt19937_64 rng(1);
  const auto series = random_series(512, rng);
  CHECK(extract_subsequences(series, 64, 64).size() == 8);
  for (std::size_t k : {1u, 7u, 512u}) {
    const auto whole = extract_subsequences(series, 512, k);
    REQUIRE(whole.size() == 1);
    CHECK(whole[0].values == series);
  }
  CHECK_THROWS_AS(extract_subsequences(x, 5, 1), ValidationError);
  CHECK_THROWS_AS(extract_subsequences(x, 2, 0), ValidationError);
}

TEST_CASE("window enumeration agrees with brute force") {
  std::mt19937_64 rng(2);
  const auto series = random_series(97, rng);
  for (std::size_t W = 1; W <= 97; W += 6) {
    for (std::size_t K = 1; K <= W; K += 5) {
      const auto got = extract_subsequences(series, W, K);
      const auto want = brute_force_spans(97, W, K);
      REQUIRE(got.size() == want.size());
      for (std::size_t i = 0; i < got.size(); ++i) {
        CHECK(got[i].span == want[i]);
        CHECK(got[i].values.size() == W);
        CHECK(got[i].values.front() == series[want[i].start]);
      }
    }
  }
}

TEST_CASE("default scales give 8..128 tokens per scale") {
  const ScaleConfig s = ScaleConfig::defaults();
  const std::size_t expect[] = {8, 16, 32, 64, 128};
  for (std::size_t q = 0; q < 5; ++q) CHECK(s.tokens_at(q, 512) == expect[q]);
}

TEST_CASE("scale validation") {
  CHECK_THROWS_AS(ScaleConfig::parse("32,64").validate(512), ValidationError);
  CHECK_THROWS_AS(ScaleConfig::parse("64:65").validate(512), ValidationError);
  CHECK_THROWS_AS(ScaleConfig::parse("1024").validate(512), ValidationError);
  CHECK_NOTHROW(ScaleConfig::parse("64:32,16:8").validate(512));
}

TEST_CASE("first_difference and window features") {
  const std::vector<double> x{1, 3, 6};
  CHECK(first_difference(x) == std::vector<double>{2, 3, 0});

  std::vector<double> flat(16, 4.0);
  for (const auto& f : compute_window_features(flat, 4, 4)) {
    for (double v : f.normalized_window) CHECK(v == 0.0);
    for (double v : f.normalized_diff_window) CHECK(v == 0.0);
    CHECK(f.local_std == 0.0);
    CHECK(f.local_mean == 4.0);
  }

  // Already standardized series: normalization leaves windows unchanged.
  std::vector<double> z{1, -1, 1, -1, 1, -1, 1, -1};
  const auto feats = compute_window_features(z, 4, 2);
  for (const auto& f : feats) {
    for (std::size_t i = 0; i < 4; ++i) CHECK(f.normalized_window[i] == doctest::Approx(z[f.span.start + i]));
  }
}

TEST_CASE("window normalization uses whole-series statistics") {
  std::mt19937_64 rng(3);
  const auto x = random_series(64, rng);
  double mu = 0.0;
  for (double v : x) mu += v;
  mu /= 64.0;
  double var = 0.0;
  for (double v : x) var += (v - mu) * (v - mu);
  const double sigma = std::sqrt(var / 64.0);
  const auto feats = compute_window_features(x, 8, 8);
  for (const auto& f : feats) {
    double lm = 0.0;
    for (std::size_t i = 0; i < 8; ++i) {
      CHECK(f.normalized_window[i] == doctest::Approx((x[f.span.start + i] - mu) / sigma));
      lm += x[f.span.start + i];
    }
    CHECK(f.local_mean == doctest::Approx(lm / 8.0));
  }
}

TEST_CASE("numeric features") {
  for (double v : numeric_features(0.0)) CHECK(v == 0.0);
  for (double v : numeric_features(256.0)) CHECK(v == 1.0);
  for (double v : numeric_features(-300.0)) CHECK(v == -1.0);
  // Doubling v shifts the unclipped slots by one position.
  const auto f1 = numeric_features(1.0);
  const auto f2 = numeric_features(2.0);
  for (std::size_t k = 0; k + 1 < kNumericFeatures; ++k) {
    const double a = std::ldexp(1.0, static_cast<int>(k) + kNumericMinExp + 1);
    if (a < 1.0) CHECK(f2[k] == f1[k + 1]);
  }
  for (int k = kNumericMinExp; k <= kNumericMaxExp; ++k) {
    const double expect = std::clamp(0.3 * std::ldexp(1.0, k), -1.0, 1.0);
    CHECK(numeric_features(0.3)[static_cast<std::size_t>(k - kNumericMinExp)] == expect);
  }
  CHECK_THROWS_AS(numeric_features(std::nan("")), ValidationError);
}

TEST_CASE("numeric embedding of zero is the bias") {
  ag::ParamStore store;
  std::mt19937_64 rng(4);
  NumericEmbedding emb(store, "e", 6, rng);
  const std::vector<double> v{0.0};
  CHECK(emb(v).value() == emb.proj.bias.value());
}

TEST_CASE("shape tokens carry no positional input") {
  Fixture fx(small_config());
  std::mt19937_64 rng(6);
  const auto x = random_series(32, rng);
  const auto feats = compute_window_features(x, 4, 4);
  WindowFeatures moved = feats[0];
  moved.span = feats[5].span;
  CHECK(fx.adapter.embed_shape_token(feats[0]).value() == fx.adapter.embed_shape_token(moved).value());
}

TEST_CASE("attention pool examples") {
  Fixture fx(small_config());
  std::mt19937_64 rng(7);
  const ag::Matrix z = random_matrix(1, 8, rng);
  const ag::Matrix zeros = ag::Matrix::Zero(5, 8);
  const auto pz = fx.adapter.attention_pool(ag::constant(zeros));
  CHECK(pz.class_token.value().norm() == 0.0);

  ag::Matrix twice(2, 8);
  twice << z, z;
  const auto p2 = fx.adapter.attention_pool(ag::constant(twice));
  CHECK(p2.scores.value()(0, 0) == p2.scores.value()(1, 0));
  CHECK((p2.class_token.value() - 2.0 * p2.scores.value()(0, 0) * z).norm() < 1e-12);

  fx.store.get("adapter.attn.out.weight").mutable_value().setZero();
  fx.store.get("adapter.attn.out.bias").mutable_value().setZero();
  const auto p1 = fx.adapter.attention_pool(ag::constant(z));
  CHECK(p1.scores.value()(0, 0) == 0.5);
  CHECK((p1.class_token.value() - 0.5 * z).norm() < 1e-15);
}

TEST_CASE("adapter forward token counts for default scales") {
  ModelConfig c = small_config(512, "64,32,16,8,4", 8);
  Fixture fx(c);
  std::mt19937_64 rng(8);
  const auto out = fx.adapter.forward(random_series(512, rng));
  const std::size_t tokens[] = {8, 16, 32, 64, 128};
  const std::size_t pooled[] = {8, 17, 33, 65, 129};
  const auto scores = out.per_scale_scores();
  for (std::size_t q = 0; q < 5; ++q) {
    CHECK(out.scales[q].num_shape_tokens() == tokens[q]);
    CHECK(static_cast<std::size_t>(out.scales[q].tokens.rows()) == pooled[q]);
    CHECK(static_cast<std::size_t>(scores[q].size()) == pooled[q]);
    CHECK(static_cast<std::size_t>(out.scales[q].shape_scores().size()) == tokens[q]);
    for (double s : scores[q]) {
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
    }
    for (std::size_t i = 0; i < tokens[q]; ++i) {
      const std::size_t w = 512 >> (q + 0);
      (void)w;
      CHECK(out.scales[q].spans[i].start == i * (64u >> q));
      CHECK(out.scales[q].spans[i].end == i * (64u >> q) + (64u >> q) - 1);
    }
  }
  CHECK(out.final_shape_tokens.rows() == 128);
  CHECK(out.final_shape_scores.rows() == 128);
  CHECK(out.class_token.rows() == 1);
  CHECK(out.class_token.cols() == 8);
  CHECK_THROWS_AS(fx.adapter.forward(random_series(100, rng)), ValidationError);
}

TEST_CASE("single scale reduces to one attention pool") {
  Fixture fx(small_config(32, "8", 8));
  std::mt19937_64 rng(9);
  const auto x = random_series(32, rng);
  const auto out = fx.adapter.forward(x);
  CHECK_FALSE(out.scales[0].has_class_slot);
  const auto tokens = fx.adapter.embed_shape_tokens(compute_window_features(x, 8, 8));
  const auto pool = fx.adapter.attention_pool(fx.adapter.trunk(tokens));
  CHECK(pool.class_token.value() == out.class_token.value());
}

TEST_CASE("attention pool gradient") {
  Fixture fx(small_config(32, "16,8,4", 8));
  std::mt19937_64 rng(10);
  auto tokens = param(6, 8, rng);
  const ag::Matrix w = random_matrix(1, 8, rng);
  const ag::Matrix ws = random_matrix(6, 1, rng);
  std::vector<ag::Var> wrt{tokens};
  for (const auto& [name, v] : fx.store.entries()) {
    if (name.rfind("adapter.attn", 0) == 0) wrt.push_back(v);
  }
  const auto f = [&] {
    const auto p = fx.adapter.attention_pool(tokens);
    return ag::add(ag::sum_all(ag::mul(p.class_token, ag::constant(w))),
                   ag::sum_all(ag::mul(p.scores, ag::constant(ws))));
  };
  CHECK(gradient_relative_error(f, wrt) < 1e-4);
}

TEST_CASE("adapter class-token norm gradient over every adapter parameter") {
  Fixture fx(small_config(32, "16,8,4", 8));
  std::mt19937_64 rng(11);
  const auto x = random_series(32, rng);
  std::vector<ag::Var> wrt;
  for (const auto& [name, v] : fx.store.entries()) wrt.push_back(v);
  const auto f = [&] {
    const auto c = fx.adapter.forward(x).class_token;
    return ag::sum_all(ag::mul(c, c));
  };
  CHECK(gradient_relative_error(f, wrt) < 1e-4);
}
