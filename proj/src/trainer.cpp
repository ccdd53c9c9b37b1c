#include "unishape/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "unishape/error.hpp"
#include "unishape/model.hpp"
#include "unishape/optimizer.hpp"
#include "unishape/prototypes.hpp"

namespace unishape {
namespace {

constexpr std::uint64_t kDropoutSalt = 0xd1b54a32d192ed03ULL;
constexpr std::uint64_t kHeadSalt = 0x632be59bd9b4e019ULL;

std::vector<std::size_t> shuffled_indices(std::size_t n, std::mt19937_64& rng) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

std::span<const double> final_scores(const AdapterOutput& out) {
  const auto& s = out.final_shape_scores.value();
  return {s.data(), static_cast<std::size_t>(s.size())};
}

ag::Matrix normalize_rows(ag::Matrix m) {
  for (ag::Index r = 0; r < m.rows(); ++r) m.row(r) /= std::max(m.row(r).norm(), 1e-12);
  return m;
}

}  // namespace

std::vector<double> random_crop_view(std::span<const double> x, std::mt19937_64& rng) {
  const std::size_t t = x.size();
  if (t < 4) throw ValidationError("random_crop_view: series must have at least 4 points");
  std::uniform_int_distribution<std::size_t> len_dist((t + 1) / 2, t);
  const std::size_t len = len_dist(rng);
  std::uniform_int_distribution<std::size_t> start_dist(0, t - len);
  const std::size_t start = start_dist(rng);
  return resize_series(x.subspan(start, len), t);
}

ag::Var contrastive_loss(const ag::Var& queries, const ag::Matrix& keys, double tau,
                         std::span<const ag::Index> positives) {
  if (!(tau > 0.0)) throw ValidationError("temperature tau must be > 0");
  if (queries.rows() == 0 || keys.rows() == 0) throw ValidationError("contrastive_loss: empty batch");
  if (queries.cols() != keys.cols()) throw ShapeError("contrastive_loss: query/key dimension mismatch");
  std::vector<int> targets(static_cast<std::size_t>(queries.rows()));
  for (std::size_t i = 0; i < targets.size(); ++i) {
    const ag::Index pos = positives.empty() ? static_cast<ag::Index>(i) : positives[i];
    if (pos < 0 || pos >= keys.rows()) throw ValidationError("contrastive_loss: positive key out of range");
    targets[i] = static_cast<int>(pos);
  }
  const ag::Var sims = ag::matmul(ag::l2_normalize_rows(queries), ag::constant(normalize_rows(keys).transpose()));
  return ag::cross_entropy(ag::scale(sims, 1.0 / tau), targets);
}

ag::Var self_sup_loss(const ag::Var& q1, const ag::Var& q2, const ag::Matrix& k1, const ag::Matrix& k2,
                      double tau) {
  if (q1.rows() != q2.rows() || k1.rows() != k2.rows() || q1.rows() != k1.rows()) {
    throw ShapeError("self_sup_loss: views must share the batch size");
  }
  return ag::scale(ag::add(contrastive_loss(q1, k2, tau), contrastive_loss(q2, k1, tau)), 0.5);
}

PretrainResult pretrain(const PretrainCorpus& corpus, const ModelConfig& model, const TrainConfig& config,
                        const StepCallback& on_step) {
  if (corpus.samples.empty()) throw ValidationError("pretrain: corpus is empty");
  if (corpus.label_mask.size() != corpus.samples.size()) {
    throw ValidationError("pretrain: label mask does not cover the corpus");
  }
  model.validate();
  config.validate();
  for (const auto& s : corpus.samples) {
    if (s.values.size() != model.series_length) {
      throw ValidationError("pretrain: sample length differs from the model's series length");
    }
  }

  ModelState state = init_model(model, std::max(2, corpus.num_global_classes), config.seed, config.proto_momentum);
  UniShapeNet& query = state.query;
  UniShapeNet& key = *state.key;
  PrototypeStore& protos = state.prototypes;

  PretrainResult result;
  if (config.epochs == 0) {
    result.checkpoint = make_checkpoint(query, &key, protos, config, config.seed);
    return result;
  }

  const auto& cc = config.contrastive;
  const std::size_t n = corpus.samples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t steps_per_epoch = (n + batch - 1) / batch;
  const std::size_t total_steps = steps_per_epoch * static_cast<std::size_t>(config.epochs);

  Adam opt(query.params(), config.weight_decay);
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 drop_rng(config.seed ^ kDropoutSalt);
  std::size_t step = 0;

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    EpochLoss acc{epoch, 0.0, 0.0, 0.0};
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t bsize = std::min(batch, n - b0);
      const PrototypeStore snapshot = protos;

      std::vector<std::vector<double>> view1(bsize);
      std::vector<std::vector<double>> view2(bsize);
      for (std::size_t i = 0; i < bsize; ++i) {
        const auto& x = corpus.samples[order[b0 + i]].values;
        view1[i] = random_crop_view(x, rng);
        view2[i] = random_crop_view(x, rng);
      }

      ag::Matrix keys1(static_cast<ag::Index>(bsize), static_cast<ag::Index>(model.proj_dim));
      ag::Matrix keys2(static_cast<ag::Index>(bsize), static_cast<ag::Index>(model.proj_dim));
      {
        ag::NoGradGuard no_grad;
        for (std::size_t i = 0; i < bsize; ++i) {
          const auto r = static_cast<ag::Index>(i);
          keys1.row(r) = key.project(key.forward_backbone(view1[i]).encoded.class_token).value().row(0);
          keys2.row(r) = key.project(key.forward_backbone(view2[i]).encoded.class_token).value().row(0);
        }
      }

      query.params().zero_grad();
      PretrainStep rec;
      rec.epoch = epoch;
      std::vector<std::pair<int, Eigen::RowVectorXd>> ema_queue;
      const double inv_b = 1.0 / static_cast<double>(bsize);
      for (std::size_t i = 0; i < bsize; ++i) {
        const std::size_t idx = order[b0 + i];
        const auto& sample = corpus.samples[idx];
        const auto pos = static_cast<ag::Index>(i);
        const ag::Index positives[] = {pos};

        BackboneOutput out1 = query.forward_backbone(view1[i], true, &drop_rng);
        BackboneOutput out2 = query.forward_backbone(view2[i], true, &drop_rng);
        ag::Var q1 = query.predict(query.project(out1.encoded.class_token));
        ag::Var q2 = query.predict(query.project(out2.encoded.class_token));
        ag::Var l_self = ag::scale(
            ag::add(contrastive_loss(q1, keys2, cc.tau, positives), contrastive_loss(q2, keys1, cc.tau, positives)),
            0.5);

        const auto& c1 = out1.encoded.class_token.value();
        const std::span<const double> c1_span(c1.data(), static_cast<std::size_t>(c1.size()));
        const bool labeled = corpus.label_mask[idx] && sample.global_class.has_value();
        const int target = labeled ? *sample.global_class : pseudo_label(snapshot, c1_span);
        ag::Var l_ins = instance_loss(out1.encoded.class_token, snapshot, target, cc.tau);
        ag::Var l_shape = shape_loss(out1.encoded.shape_tokens, final_scores(out1.adapter), snapshot, target, cc.tau,
                                     cc.epsilon);
        ag::Var l_proto = proto_loss(l_ins, l_shape, cc.lambda);
        ag::Var total = ag::add(l_proto, l_self);
        ag::backward(ag::scale(total, inv_b));

        rec.l_ins += l_ins.item() * inv_b;
        rec.l_shape += l_shape.item() * inv_b;
        rec.l_proto += l_proto.item() * inv_b;
        rec.l_self += l_self.item() * inv_b;
        rec.total += total.item() * inv_b;
        if (labeled || config.pseudo_label_updates) ema_queue.emplace_back(target, c1.row(0));
      }

      opt.step(cosine_lr(config.learning_rate, step, total_steps));
      momentum_step(query.params(), key.params(), config.key_momentum);
      for (const auto& [cls, token] : ema_queue) {
        ema_update(protos, cls, std::span<const double>(token.data(), static_cast<std::size_t>(token.size())));
      }
      ++step;

      result.steps.push_back(rec);
      const double w = static_cast<double>(bsize) / static_cast<double>(n);
      acc.l_proto += rec.l_proto * w;
      acc.l_self += rec.l_self * w;
      acc.total += rec.total * w;
      if (on_step) on_step(step, total_steps, rec.total);
    }
    result.epochs.push_back(acc);
  }
  result.checkpoint = make_checkpoint(query, &key, protos, config, config.seed);
  return result;
}

FinetuneResult finetune(const ModelCheckpoint& checkpoint, const Dataset& dataset, const TrainConfig& config,
                        const StepCallback& on_step) {
  config.validate();
  if (dataset.samples.empty()) throw ValidationError("finetune: dataset is empty");
  for (const auto& s : dataset.samples) {
    if (!s.label) throw ValidationError("finetune: dataset " + dataset.id + " contains unlabeled samples");
  }
  if (dataset.num_classes < 2) throw ValidationError("finetune: need at least 2 classes");

  ModelState state = restore_model(checkpoint);
  UniShapeNet& net = state.query;
  const ModelConfig& model = net.config();
  for (const auto& s : dataset.samples) {
    if (s.values.size() != model.series_length) {
      throw ValidationError("finetune: sample length differs from the model's series length");
    }
  }
  net.reset_head(dataset.num_classes, config.seed ^ kHeadSalt);
  PrototypeStore protos = init_prototypes(dataset.num_classes, model.dim, config.seed, config.proto_momentum);
  const UniShapeNet* key = state.key ? &*state.key : nullptr;

  FinetuneResult result;
  result.checkpoint = make_checkpoint(net, key, protos, config, config.seed);
  if (config.epochs == 0) return result;

  const auto& cc = config.contrastive;
  const std::size_t n = dataset.samples.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);
  const std::size_t total_steps = ((n + batch - 1) / batch) * static_cast<std::size_t>(config.epochs);
  Adam opt(net.params(), config.weight_decay);
  std::mt19937_64 rng(config.seed);
  std::mt19937_64 drop_rng(config.seed ^ kDropoutSalt);
  std::size_t step = 0;
  double best = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    const auto order = shuffled_indices(n, rng);
    double epoch_total = 0.0;
    std::size_t correct = 0;
    for (std::size_t b0 = 0; b0 < n; b0 += batch) {
      const std::size_t bsize = std::min(batch, n - b0);
      const PrototypeStore snapshot = protos;
      const double inv_b = 1.0 / static_cast<double>(bsize);
      net.params().zero_grad();
      FinetuneStep rec;
      rec.epoch = epoch;
      std::vector<std::pair<int, Eigen::RowVectorXd>> ema_queue;
      for (std::size_t i = 0; i < bsize; ++i) {
        const auto& sample = dataset.samples[order[b0 + i]];
        const int y = *sample.label;
        BackboneOutput out = net.forward_backbone(sample.values, true, &drop_rng);
        ag::Var logits = net.logits(out.encoded.class_token);
        const int targets[] = {y};
        ag::Var l_ce = ag::cross_entropy(logits, targets);
        ag::Var l_shape = shape_loss(out.encoded.shape_tokens, final_scores(out.adapter), snapshot, y, cc.tau,
                                     cc.epsilon);
        ag::Var total = config.mu > 0.0 ? ag::add(l_ce, ag::scale(l_shape, config.mu)) : l_ce;
        ag::backward(ag::scale(total, inv_b));

        rec.l_ce += l_ce.item() * inv_b;
        rec.l_shape += l_shape.item() * inv_b;
        rec.total += total.item() * inv_b;
        if (argmax_lowest(logits.value()) == y) ++correct;
        ema_queue.emplace_back(y, out.encoded.class_token.value().row(0));
      }
      opt.step(cosine_lr(config.learning_rate, step, total_steps));
      for (const auto& [cls, token] : ema_queue) {
        ema_update(protos, cls, std::span<const double>(token.data(), static_cast<std::size_t>(token.size())));
      }
      ++step;
      epoch_total += rec.total * static_cast<double>(bsize);
      result.steps.push_back(rec);
      if (on_step) on_step(step, total_steps, rec.total);
    }
    const double mean_loss = epoch_total / static_cast<double>(n);
    result.epoch_loss.push_back(mean_loss);
    result.epoch_train_accuracy.push_back(static_cast<double>(correct) / static_cast<double>(n));
    if (mean_loss < best) {
      best = mean_loss;
      result.best_epoch = epoch;
      result.checkpoint = make_checkpoint(net, key, protos, config, config.seed);
    }
  }
  return result;
}

std::vector<int> predict(const UniShapeNet& net, const Dataset& dataset) {
  std::vector<int> out;
  out.reserve(dataset.size());
  for (const auto& s : dataset.samples) out.push_back(net.classify(s.values));
  return out;
}

double accuracy(const UniShapeNet& net, const Dataset& dataset) {
  if (dataset.samples.empty()) throw ValidationError("accuracy: empty dataset");
  const auto pred = predict(net, dataset);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (dataset.samples[i].label && *dataset.samples[i].label == pred[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

double accuracy(const ModelCheckpoint& checkpoint, const Dataset& dataset) {
  const ModelState state = restore_model(checkpoint);
  return accuracy(state.query, dataset);
}

}  // namespace unishape
