#include <doctest.h>

#include <cmath>

#include "test_support.hpp"
#include "unishape/error.hpp"
#include "unishape/model.hpp"
#include "unishape/trainer.hpp"

using namespace unishape;
using namespace unishape::testing;

namespace {

const double kTwoClassLoss = -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0));

ModelConfig tiny_model() {
  ModelConfig c;
  c.series_length = 64;
  c.scales = ScaleConfig::parse("16,8,4");
  c.dim = 8;
  c.depth = 1;
  c.heads = 2;
  c.ff_dim = 16;
  c.proj_dim = 8;
  return c;
}

// Motif data shrunk to the tiny model's length.
Dataset tiny_dataset(std::size_t n_per_class, std::uint64_t seed, const std::string& id) {
  Dataset ds = generate_motif_dataset(n_per_class, {192, 319}, 0.3, seed);
  ds.id = id;
  for (auto& s : ds.samples) {
    s.values = resize_series(s.values, 64);
    s.dataset_id = id;
  }
  return ds;
}

TrainConfig tiny_train(int epochs, int batch) {
  TrainConfig t;
  t.epochs = epochs;
  t.batch_size = batch;
  t.seed = 5;
  return t;
}

}  // namespace

TEST_CASE("random_crop_view") {
  std::mt19937_64 rng(1);
  const std::vector<double> flat(512, 3.25);
  for (int i = 0; i < 5; ++i) {
    for (double v : random_crop_view(flat, rng)) CHECK(v == 3.25);
  }
  const auto x = random_series(512, rng);
  std::mt19937_64 a(7);
  std::mt19937_64 b(7);
  CHECK(random_crop_view(x, a) == random_crop_view(x, b));
  CHECK(random_crop_view(x, a).size() == 512);
  // A full-length crop reduces to the identity resize.
  CHECK(resize_series(x, 512) == x);
}

TEST_CASE("contrastive loss examples") {
  ag::Matrix q = ag::Matrix::Zero(1, 3);
  q(0, 0) = 1.0;
  CHECK(contrastive_loss(ag::constant(q), q, 0.2).item() == doctest::Approx(0.0));

  ag::Matrix q2 = ag::Matrix::Zero(2, 2);
  q2(0, 0) = 1.0;
  q2(1, 1) = 1.0;
  // q1 = k1 unit, k2 orthogonal to q1.
  const auto l = contrastive_loss(ag::constant(q2), q2, 1.0);
  CHECK(l.item() == doctest::Approx(kTwoClassLoss).epsilon(1e-12));
}

TEST_CASE("self-supervised loss is symmetric in the two views") {
  std::mt19937_64 rng(2);
  const ag::Matrix q1 = random_matrix(4, 6, rng);
  const ag::Matrix q2 = random_matrix(4, 6, rng);
  const ag::Matrix k1 = random_matrix(4, 6, rng);
  const ag::Matrix k2 = random_matrix(4, 6, rng);
  const double a = self_sup_loss(ag::constant(q1), ag::constant(q2), k1, k2, 0.2).item();
  const double b = self_sup_loss(ag::constant(q2), ag::constant(q1), k2, k1, 0.2).item();
  CHECK(a == doctest::Approx(b).epsilon(1e-14));
}

TEST_CASE("self-supervised loss gradient") {
  std::mt19937_64 rng(3);
  auto q1 = param(4, 6, rng);
  auto q2 = param(4, 6, rng);
  const ag::Matrix k1 = random_matrix(4, 6, rng);
  const ag::Matrix k2 = random_matrix(4, 6, rng);
  CHECK(gradient_relative_error([&] { return self_sup_loss(q1, q2, k1, k2, 0.2); }, {q1, q2}) < 1e-4);
}

TEST_CASE("momentum_step") {
  UniShapeNet q(tiny_model(), 2, 1);
  UniShapeNet k(tiny_model(), 2, 2, UniShapeNet::kProjector);
  for (auto& [n, v] : q.params().entries()) v.mutable_value().setOnes();
  for (auto& [n, v] : k.params().entries()) v.mutable_value().setZero();
  momentum_step(q.params(), k.params(), 0.99);
  for (const auto& [n, v] : k.params().entries()) CHECK(v.value().isConstant(0.01 * 1.0 + 0.0, 1e-15));
  momentum_step(q.params(), k.params(), 1.0);
  for (const auto& [n, v] : k.params().entries()) CHECK(v.value().isConstant(0.01, 1e-15));
  momentum_step(q.params(), k.params(), 0.0);
  for (const auto& [n, v] : k.params().entries()) CHECK(v.value() == q.params().get(n).value());
  CHECK(k.params().size() < q.params().size());
}

TEST_CASE("pretrain with zero epochs returns the initialization") {
  const auto corpus = build_pretrain_corpus({tiny_dataset(4, 1, "a")}, 0.5, 3);
  const auto result = pretrain(corpus, tiny_model(), tiny_train(0, 4));
  const ModelState init = init_model(tiny_model(), corpus.num_global_classes, 5);
  const auto expect = make_checkpoint(init.query, &*init.key, init.prototypes, tiny_train(0, 4), 5);
  CHECK(result.checkpoint == expect);
  CHECK(result.epochs.empty());
  // Momentum copy mirrors the query network's backbone and projector.
  for (const auto& a : result.checkpoint.arrays) {
    if (a.name.rfind(kMomentumPrefix, 0) == 0) {
      const auto* q = result.checkpoint.find(a.name.substr(std::string(kMomentumPrefix).size()));
      REQUIRE(q != nullptr);
      CHECK(q->shape == a.shape);
    }
  }
}

TEST_CASE("recorded pretraining losses compose exactly") {
  const auto corpus = build_pretrain_corpus({tiny_dataset(4, 1, "a"), tiny_dataset(3, 2, "b")}, 0.5, 3);
  const auto cfg = tiny_train(2, 5);
  const auto result = pretrain(corpus, tiny_model(), cfg);
  CHECK(result.steps.size() == 6);
  CHECK(result.epochs.size() == 2);
  for (const auto& s : result.steps) {
    CHECK(std::abs(s.total - (s.l_proto + s.l_self)) < 1e-9);
    const double lam = cfg.contrastive.lambda;
    CHECK(std::abs(s.l_proto - ((1 - lam) * s.l_ins + lam * s.l_shape)) < 1e-9);
  }
}

TEST_CASE("pretraining is deterministic for a fixed seed") {
  const auto corpus = build_pretrain_corpus({tiny_dataset(3, 1, "a")}, 1.0, 3);
  const auto a = pretrain(corpus, tiny_model(), tiny_train(1, 4));
  const auto b = pretrain(corpus, tiny_model(), tiny_train(1, 4));
  CHECK(a.checkpoint == b.checkpoint);
  CHECK(parameter_hash(a.checkpoint) == parameter_hash(b.checkpoint));
}

TEST_CASE("pretraining reduces the total loss") {
  const auto corpus = build_pretrain_corpus({tiny_dataset(10, 1, "a"), tiny_dataset(10, 2, "b")}, 0.5, 3);
  auto cfg = tiny_train(15, 8);
  const auto result = pretrain(corpus, tiny_model(), cfg);
  CHECK(result.epochs.back().total < result.epochs.front().total);
}

TEST_CASE("fine-tuning with zero epochs keeps the backbone") {
  const auto corpus = build_pretrain_corpus({tiny_dataset(3, 1, "a")}, 1.0, 3);
  const auto pre = pretrain(corpus, tiny_model(), tiny_train(1, 4));
  Dataset target = tiny_dataset(3, 9, "t");
  target.num_classes = 2;
  const auto ft = finetune(pre.checkpoint, target, tiny_train(0, 4));
  CHECK(ft.best_epoch == -1);
  for (const auto& a : pre.checkpoint.arrays) {
    if (a.name.rfind("adapter.", 0) == 0 || a.name.rfind("encoder.", 0) == 0) {
      const auto* b = ft.checkpoint.find(a.name);
      REQUIRE(b != nullptr);
      CHECK(*b == a);
    }
  }
}

TEST_CASE("fine-tuning with mu = 0 is plain cross-entropy") {
  const ModelState init = init_model(tiny_model(), 2, 4);
  const auto ck = make_checkpoint(init.query, &*init.key, init.prototypes, TrainConfig{}, 4);
  auto cfg = tiny_train(2, 4);
  cfg.mu = 0.0;
  const auto ft = finetune(ck, tiny_dataset(4, 3, "t"), cfg);
  for (const auto& s : ft.steps) CHECK(s.total == s.l_ce);
  cfg.mu = 0.5;
  const auto ft2 = finetune(ck, tiny_dataset(4, 3, "t"), cfg);
  for (const auto& s : ft2.steps) CHECK(std::abs(s.total - (s.l_ce + 0.5 * s.l_shape)) < 1e-12);
}

TEST_CASE("fine-tuning keeps the lowest-loss epoch") {
  const ModelState init = init_model(tiny_model(), 2, 4);
  const auto ck = make_checkpoint(init.query, &*init.key, init.prototypes, TrainConfig{}, 4);
  auto cfg = tiny_train(6, 4);
  cfg.learning_rate = 1e-3;
  const auto ft = finetune(ck, tiny_dataset(4, 3, "t"), cfg);
  REQUIRE(ft.epoch_loss.size() == 6);
  const auto best = std::min_element(ft.epoch_loss.begin(), ft.epoch_loss.end()) - ft.epoch_loss.begin();
  CHECK(ft.best_epoch == best);
}

TEST_CASE("fine-tuning rejects unusable datasets") {
  const ModelState init = init_model(tiny_model(), 2, 4);
  const auto ck = make_checkpoint(init.query, &*init.key, init.prototypes, TrainConfig{}, 4);
  Dataset unlabeled = tiny_dataset(2, 3, "t");
  unlabeled.samples[0].label.reset();
  CHECK_THROWS_AS(finetune(ck, unlabeled, tiny_train(1, 2)), ValidationError);
  Dataset wrong_length = generate_motif_dataset(2, {0, 9}, 0.1, 1);
  CHECK_THROWS_AS(finetune(ck, wrong_length, tiny_train(1, 2)), ValidationError);
}
