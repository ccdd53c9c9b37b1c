#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "unishape/error.hpp"
#include "unishape/prototypes.hpp"

using namespace unishape;
using namespace unishape::testing;

namespace {

const double kTwoClassLoss = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));

PrototypeStore orthonormal_pair(std::size_t d = 4) {
  PrototypeStore s = init_prototypes(2, d, 0);
  s.prototypes.setZero();
  s.prototypes(0, 0) = 1.0;
  s.prototypes(1, 1) = 1.0;
  return s;
}

// Direct evaluation of -log softmax_c(cos(t, p_c) / tau) at `target`.
double reference_loss(const Eigen::RowVectorXd& t, const ag::Matrix& P, int target, double tau) {
  std::vector<double> logits;
  for (ag::Index c = 0; c < P.rows(); ++c) {
    const double denom = t.norm() * P.row(c).norm();
    logits.push_back((denom > 0 ? t.dot(P.row(c)) / denom : 0.0) / tau);
  }
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return -(logits[static_cast<std::size_t>(target)] - mx - std::log(z));
}

}  // namespace

TEST_CASE("init_prototypes") {
  const auto a = init_prototypes(3, 5, 42);
  const auto b = init_prototypes(3, 5, 42);
  CHECK(a.prototypes == b.prototypes);
  CHECK(a.prototypes.rows() == 3);
  CHECK(a.beta == 0.9);
  CHECK(init_prototypes(1, 5, 1).num_classes() == 1);
  CHECK_THROWS_AS(init_prototypes(0, 5, 1), ValidationError);
}

TEST_CASE("prototype norm has unit second moment") {
  const auto s = init_prototypes(10000, 16, 7);
  double mean_sq = 0.0;
  for (ag::Index c = 0; c < s.prototypes.rows(); ++c) mean_sq += s.prototypes.row(c).squaredNorm();
  mean_sq /= static_cast<double>(s.prototypes.rows());
  CHECK(std::abs(mean_sq - 1.0) < 0.05);
}

TEST_CASE("ema_update") {
  PrototypeStore s = init_prototypes(1, 2, 0);
  s.prototypes.setZero();
  const std::vector<double> c{1.0, 1.0};
  ema_update(s, 0, c);
  CHECK(s.prototypes(0, 0) == doctest::Approx(0.1));
  CHECK(s.prototypes(0, 1) == doctest::Approx(0.1));
  ema_update(s, 0, c);
  CHECK(s.prototypes(0, 0) == doctest::Approx(1.0 - 0.81));
  CHECK(s.update_counts[0] == 2);

  PrototypeStore frozen = init_prototypes(1, 2, 3, 1.0);
  const ag::Matrix before = frozen.prototypes;
  ema_update(frozen, 0, c);
  CHECK(frozen.prototypes == before);
  CHECK_THROWS_AS(ema_update(s, 0, std::vector<double>{1.0}), ShapeError);
}

TEST_CASE("pseudo_label") {
  PrototypeStore s = orthonormal_pair(2);
  CHECK(pseudo_label(s, std::vector<double>{0.9, 0.1}) == 0);
  CHECK(pseudo_label(s, std::vector<double>{0.1, 0.9}) == 1);
  CHECK(pseudo_label(s, std::vector<double>{1.0, 1.0}) == 0);
  CHECK(pseudo_label(s, std::vector<double>{0.2, 0.7}) == pseudo_label(s, std::vector<double>{20.0, 70.0}));
}

TEST_CASE("instance loss values") {
  const PrototypeStore s = orthonormal_pair();
  ag::Matrix c = ag::Matrix::Zero(1, 4);
  c(0, 0) = 1.0;
  CHECK(instance_loss(ag::constant(c), s, 0, 1.0).item() == doctest::Approx(kTwoClassLoss).epsilon(1e-12));
  CHECK(kTwoClassLoss == doctest::Approx(0.31326).epsilon(1e-5));

  ag::Matrix eq = ag::Matrix::Zero(1, 4);
  eq(0, 0) = 1.0;
  eq(0, 1) = 1.0;
  CHECK(instance_loss(ag::constant(eq), s, 1, 0.2).item() == doctest::Approx(std::log(2.0)));

  const PrototypeStore one = init_prototypes(1, 4, 9);
  CHECK(instance_loss(ag::constant(eq), one, 0, 0.2).item() == doctest::Approx(0.0));
  CHECK_THROWS_AS(instance_loss(ag::constant(eq), s, 2, 0.2), ValidationError);
}

TEST_CASE("instance loss matches direct evaluation") {
  std::mt19937_64 rng(11);
  const auto s = init_prototypes(5, 6, 12);
  for (int trial = 0; trial < 20; ++trial) {
    const ag::Matrix t = random_matrix(1, 6, rng);
    const int y = trial % 5;
    CHECK(instance_loss(ag::constant(t), s, y, 0.2).item() ==
          doctest::Approx(reference_loss(t.row(0), s.prototypes, y, 0.2)).epsilon(1e-12));
  }
}

TEST_CASE("top-token selection") {
  std::vector<double> scores(128);
  for (std::size_t i = 0; i < 128; ++i) scores[i] = static_cast<double>((i * 37) % 128);
  CHECK(select_top_tokens(scores, 0.6).size() == 77);
  CHECK(select_top_tokens(scores, 1.0).size() == 128);
  const std::vector<double> tied{0.5, 0.9, 0.5, 0.5};
  CHECK(select_top_tokens(tied, 0.5) == std::vector<ag::Index>{1, 0});
  CHECK_THROWS_AS(select_top_tokens(tied, 0.0), ValidationError);
}

TEST_CASE("shape loss equals a brute-force average over the selected tokens") {
  std::mt19937_64 rng(13);
  const auto s = init_prototypes(3, 5, 14);
  const ag::Matrix tokens = random_matrix(10, 5, rng);
  std::vector<double> scores(10);
  std::uniform_real_distribution<double> u(0, 1);
  for (auto& v : scores) v = u(rng);
  for (double eps : {0.1, 0.35, 0.6, 1.0}) {
    const auto k = static_cast<std::size_t>(std::ceil(eps * 10.0 - 1e-12));
    // Independent top-k: repeatedly take the highest remaining score, lowest index on ties.
    std::vector<bool> used(10, false);
    double sum = 0.0;
    for (std::size_t r = 0; r < k; ++r) {
      int best = -1;
      for (int i = 0; i < 10; ++i) {
        if (!used[i] && (best < 0 || scores[i] > scores[best])) best = i;
      }
      used[best] = true;
      sum += reference_loss(tokens.row(best), s.prototypes, 2, 0.2);
    }
    CHECK(shape_loss(ag::constant(tokens), scores, s, 2, 0.2, eps).item() ==
          doctest::Approx(sum / static_cast<double>(k)).epsilon(1e-12));
  }
}

TEST_CASE("shape loss on tokens aligned with the positive prototype") {
  const PrototypeStore s = orthonormal_pair();
  ag::Matrix tokens = ag::Matrix::Zero(128, 4);
  tokens.col(0).setOnes();
  std::vector<double> scores(128, 0.3);
  CHECK(shape_loss(ag::constant(tokens), scores, s, 0, 1.0, 0.6).item() ==
        doctest::Approx(kTwoClassLoss).epsilon(1e-12));
}

TEST_CASE("proto_loss") {
  CHECK(proto_loss(1.0, 0.0, 0.01) == doctest::Approx(0.99));
  for (double lam : {0.0, 0.01, 0.5, 1.0}) CHECK(proto_loss(2.5, 2.5, lam) == doctest::Approx(2.5));
  CHECK(proto_loss(ag::scalar(3.0), ag::scalar(1.0), 0.25).item() == 0.75 * 3.0 + 0.25 * 1.0);
}

TEST_CASE("prototype loss gradients") {
  std::mt19937_64 rng(15);
  const auto s = init_prototypes(4, 6, 16);
  auto c = param(1, 6, rng);
  CHECK(gradient_relative_error([&] { return instance_loss(c, s, 2, 0.2); }, {c}) < 1e-4);
  auto tokens = param(9, 6, rng);
  std::vector<double> scores(9);
  for (std::size_t i = 0; i < 9; ++i) scores[i] = std::sin(static_cast<double>(i));
  CHECK(gradient_relative_error([&] { return shape_loss(tokens, scores, s, 1, 0.2, 0.6); }, {tokens}) < 1e-4);
}

TEST_CASE("prototypes are constants in the graph") {
  std::mt19937_64 rng(17);
  auto s = init_prototypes(3, 4, 18);
  const ag::Matrix before = s.prototypes;
  auto c = param(1, 4, rng);
  ag::backward(instance_loss(c, s, 0, 0.2));
  CHECK(s.prototypes == before);
}
