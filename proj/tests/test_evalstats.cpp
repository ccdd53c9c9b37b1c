#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "unishape/error.hpp"
#include "unishape/evalstats.hpp"
#include "unishape/forest.hpp"

using namespace unishape;
using namespace unishape::testing;

namespace {

// P(W+ >= observed) by enumerating all 2^n sign assignments of the ranked
// absolute differences.
double brute_force_wilcoxon(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (std::abs(a[i] - b[i]) > 1e-12) d.push_back(a[i] - b[i]);
  }
  const std::size_t n = d.size();
  if (n == 0) return 1.0;
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n; ++i) {
    double less = 0.0;
    double equal = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double diff = std::abs(d[j]) - std::abs(d[i]);
      if (std::abs(diff) <= 1e-12) {
        equal += 1.0;
      } else if (diff < 0) {
        less += 1.0;
      }
    }
    rank[i] = less + (equal + 1.0) / 2.0;
  }
  double observed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (d[i] > 0) observed += rank[i];
  }
  std::size_t hits = 0;
  for (std::size_t mask = 0; mask < (std::size_t{1} << n); ++mask) {
    double w = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (std::size_t{1} << i)) w += rank[i];
    }
    if (w >= observed - 1e-9) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(std::size_t{1} << n);
}

FeatureMatrix make_features(const ag::Matrix& rows, std::vector<int> labels) {
  FeatureMatrix f;
  f.rows = rows;
  f.labels = std::move(labels);
  return f;
}

}  // namespace

TEST_CASE("wilcoxon exact examples") {
  const std::vector<double> a{0.9, 0.8, 0.85, 0.7, 0.95};
  const std::vector<double> b{0.89, 0.78, 0.82, 0.66, 0.9};
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK(r.exact);
  CHECK(r.n_effective == 5);
  CHECK(r.w_plus == 15.0);
  CHECK(r.p_value == doctest::Approx(0.03125).epsilon(1e-12));

  const auto same = wilcoxon_signed_rank(a, a);
  CHECK(same.p_value == 1.0);
  CHECK(same.n_effective == 0);

  const auto rev = wilcoxon_signed_rank(b, a);
  CHECK(rev.w_plus == 5.0 * 6.0 / 2.0 - r.w_plus);
  CHECK(rev.p_value == doctest::Approx(1.0));
  CHECK_THROWS_AS(wilcoxon_signed_rank(a, std::vector<double>{1.0}), ValidationError);
}

TEST_CASE("wilcoxon matches sign enumeration on random instances") {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> size(1, 12);
  std::uniform_int_distribution<int> pct(60, 100);
  for (int trial = 0; trial < 100; ++trial) {
    const int n = size(rng);
    std::vector<double> a(static_cast<std::size_t>(n));
    std::vector<double> b(static_cast<std::size_t>(n));
    // Coarse accuracies so zeros and tied magnitudes occur.
    for (int i = 0; i < n; ++i) {
      a[static_cast<std::size_t>(i)] = pct(rng) / 100.0;
      b[static_cast<std::size_t>(i)] = pct(rng) / 100.0;
    }
    const auto r = wilcoxon_signed_rank(a, b);
    CHECK(std::abs(r.p_value - brute_force_wilcoxon(a, b)) < 1e-12);
  }
}

TEST_CASE("wilcoxon normal approximation above 20 pairs") {
  std::vector<double> a(25);
  std::vector<double> b(25, 0.0);
  for (std::size_t i = 0; i < 25; ++i) a[i] = 0.01 * static_cast<double>(i + 1);
  const auto r = wilcoxon_signed_rank(a, b);
  CHECK_FALSE(r.exact);
  // Reference: scipy.stats.wilcoxon(..., alternative="greater", method="approx", correction=True).
  CHECK(r.p_value == doctest::Approx(6.535302739006514e-06).epsilon(1e-9));

  const std::vector<double> x{0.82, 0.63, 0.52, 0.51, 0.91, 0.96, 0.8,  0.86, 0.77, 0.97,
                              0.91, 0.5,  0.93, 0.52, 0.86, 0.59, 0.93, 0.77, 0.65, 0.71,
                              0.51, 0.56, 0.84, 0.82, 0.81, 0.69, 1.0,  0.99, 0.84, 0.83};
  const std::vector<double> y{0.84, 0.69, 0.57, 0.86, 0.76, 0.66, 0.74, 0.94, 0.97, 0.68,
                              0.79, 0.66, 0.8,  0.67, 0.7,  0.95, 0.61, 0.81, 0.54, 0.92,
                              0.89, 0.62, 0.94, 0.53, 0.67, 0.58, 0.73, 0.9,  0.62, 0.53};
  const auto t = wilcoxon_signed_rank(x, y);
  CHECK(t.w_plus == 274.0);
  CHECK(t.p_value == doctest::Approx(0.19947368790361608).epsilon(1e-9));
}

TEST_CASE("average ranks") {
  CHECK(average_ranks({{0.9, 0.8}, {0.7, 0.6}}) == std::vector<double>{1.0, 2.0});
  CHECK(average_ranks({{0.9, 0.9}}) == std::vector<double>{1.5, 1.5});
  CHECK(average_ranks({{0.9, 0.8, 0.7}}) == std::vector<double>{1.0, 2.0, 3.0});
  CHECK(rank_descending(std::vector<double>{0.5, 0.7, 0.5, 0.1}) == std::vector<double>{2.5, 1.0, 2.5, 4.0});
  CHECK_THROWS_AS(average_ranks({{0.9, 0.8}, {0.7}}), ValidationError);
}

TEST_CASE("accuracy CSV parsing") {
  const auto t = parse_accuracy_csv("dataset,method,accuracy\nd1,A,0.9\nd1,B,0.8\nd2,A,0.7\nd2,B,0.75\n");
  CHECK(t.datasets == std::vector<std::string>{"d1", "d2"});
  CHECK(t.methods == std::vector<std::string>{"A", "B"});
  CHECK(t.column("B") == std::vector<double>{0.8, 0.75});
  CHECK(parse_accuracy_csv(format_accuracy_csv(t)).values == t.values);

  const auto expect_row = [](const std::string& text, const std::string& row) {
    try {
      parse_accuracy_csv(text);
      FAIL("expected a parse error");
    } catch (const ParseError& e) {
      CHECK(std::string(e.what()).find("row " + row) != std::string::npos);
    }
  };
  expect_row("dataset,method,accuracy\nd1,A,0.9\nd1,B\n", "3");
  expect_row("dataset,method,accuracy\nd1,A,zero\n", "2");
  expect_row("dataset,method,accuracy\nd1,A,1.5\n", "2");
  expect_row("dataset,method,accuracy\nd1,A,0.5\nd1,A,0.6\n", "3");
  expect_row("name,acc\n", "1");
}

TEST_CASE("evaluation report") {
  AccuracyTable t;
  const double a[] = {0.9, 0.8, 0.85, 0.7, 0.95};
  const double b[] = {0.89, 0.78, 0.82, 0.66, 0.9};
  for (int i = 0; i < 5; ++i) {
    t.set("d" + std::to_string(i), "A", a[i]);
    t.set("d" + std::to_string(i), "B", b[i]);
  }
  const auto r = evaluate_table(t);
  CHECK(r.p_values.at({"A", "B"}) == doctest::Approx(0.03125));
  CHECK(r.avg_rank.at("A") == 1.0);
  CHECK(r.avg_acc.at("A") == doctest::Approx(0.84));
  const auto j = to_json(r);
  CHECK(j["p_values"]["A"]["B"].get<double>() == doctest::Approx(0.03125));

  AccuracyTable same;
  for (int i = 0; i < 3; ++i) {
    same.set("d" + std::to_string(i), "A", 0.5 + 0.1 * i);
    same.set("d" + std::to_string(i), "B", 0.5 + 0.1 * i);
  }
  const auto rs = evaluate_table(same);
  CHECK(rs.avg_rank.at("A") == 1.5);
  CHECK(rs.avg_rank.at("B") == 1.5);
  CHECK(rs.p_values.at({"A", "B"}) == 1.0);

  AccuracyTable holes;
  holes.set("d1", "A", 0.5);
  holes.set("d2", "B", 0.5);
  CHECK_THROWS_AS(evaluate_table(holes), ValidationError);
}

TEST_CASE("random forest on a single-feature split") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> n(0.0, 1.0);
  const auto make = [&](int count) {
    ag::Matrix x(count, 4);
    std::vector<int> y;
    for (int i = 0; i < count; ++i) {
      const int label = i % 2;
      for (int k = 0; k < 4; ++k) x(i, k) = n(rng);
      x(i, 0) = (label ? 1.0 : -1.0) * (1.0 + std::abs(n(rng)));
      y.push_back(label);
    }
    return make_features(x, y);
  };
  const auto train = make(60);
  const auto test = make(40);
  CHECK(zero_shot_eval(train, test, 1) == 1.0);
  CHECK(zero_shot_eval(train, test, 7) == zero_shot_eval(train, test, 7));
}

TEST_CASE("random forest on permuted labels is at chance") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n(0.0, 1.0);
  ag::Matrix x(2000, 4);
  std::vector<int> y;
  for (int i = 0; i < 2000; ++i) {
    const int label = i % 2;
    for (int k = 0; k < 4; ++k) x(i, k) = n(rng);
    x(i, 0) += label ? 3.0 : -3.0;
    y.push_back(label);
  }
  const auto train = make_features(x.topRows(1000), std::vector<int>(y.begin(), y.begin() + 1000));
  std::vector<int> permuted(y.begin() + 1000, y.end());
  std::shuffle(permuted.begin(), permuted.end(), rng);
  const auto test = make_features(x.bottomRows(1000), permuted);
  const double acc = zero_shot_eval(train, test, 2);
  CHECK(std::abs(acc - 0.5) <= 0.05);
}

TEST_CASE("zero-shot evaluation does not depend on training row order") {
  std::mt19937_64 rng(8);
  const ag::Matrix x = random_matrix(30, 3, rng);
  std::vector<int> y;
  for (int i = 0; i < 30; ++i) y.push_back(x(i, 1) > 0 ? 1 : 0);
  const ag::Matrix xt = random_matrix(20, 3, rng);
  std::vector<int> yt;
  for (int i = 0; i < 20; ++i) yt.push_back(xt(i, 1) > 0 ? 1 : 0);
  ag::Matrix xr = x.colwise().reverse();
  std::vector<int> yr(y.rbegin(), y.rend());
  CHECK(zero_shot_eval(make_features(x, y), make_features(xt, yt), 3) ==
        zero_shot_eval(make_features(xr, yr), make_features(xt, yt), 3));
  CHECK_THROWS_AS(zero_shot_eval(make_features(x, std::vector<int>(30, 0)), make_features(xt, yt), 3),
                  ValidationError);
  CHECK_THROWS_AS(zero_shot_eval(make_features(x, y), make_features(random_matrix(2, 5, rng), {0, 1}), 3),
                  ShapeError);
}

TEST_CASE("extract_features shape and determinism") {
  ModelConfig c;
  c.series_length = 512;
  c.dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.ff_dim = 16;
  const ModelState st = init_model(c, 2, 3);
  const auto ck = make_checkpoint(st.query, nullptr, st.prototypes, TrainConfig{}, 3);
  Dataset ds = generate_motif_dataset(2, {100, 150}, 0.2, 4);
  ds.samples.push_back(ds.samples[0]);
  const auto f1 = extract_features(ck, ds, "ck");
  const auto f2 = extract_features(ck, ds, "ck");
  CHECK(f1.rows.rows() == 5);
  CHECK(f1.rows.cols() == 8);
  CHECK(f1.rows == f2.rows);
  CHECK(f1.rows.row(0) == f1.rows.row(4));
  CHECK(f1.checkpoint_id == "ck");
}
