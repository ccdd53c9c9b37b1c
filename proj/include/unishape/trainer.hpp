#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "unishape/autograd.hpp"
#include "unishape/checkpoint.hpp"
#include "unishape/config.hpp"
#include "unishape/dataio.hpp"

namespace unishape {

/// Random crop of length U[ceil(T/2), T] at a uniform offset, resized back to T.
std::vector<double> random_crop_view(std::span<const double> x, std::mt19937_64& rng);

/// Mean over query rows of -log softmax_j(cos(q_i, k_j) / tau) at the
/// positive key. positives[i] defaults to i. Keys are constants.
ag::Var contrastive_loss(const ag::Var& queries, const ag::Matrix& keys, double tau,
                         std::span<const ag::Index> positives = {});

/// Symmetrized momentum-contrastive loss: the average of
/// contrastive_loss(q1, k2) and contrastive_loss(q2, k1).
ag::Var self_sup_loss(const ag::Var& q1, const ag::Var& q2, const ag::Matrix& k1, const ag::Matrix& k2,
                      double tau);

struct PretrainStep {
  int epoch = 0;
  double l_ins = 0.0;
  double l_shape = 0.0;
  double l_proto = 0.0;
  double l_self = 0.0;
  double total = 0.0;
};

struct EpochLoss {
  int epoch = 0;
  double l_proto = 0.0;
  double l_self = 0.0;
  double total = 0.0;
};

struct PretrainResult {
  ModelCheckpoint checkpoint;
  std::vector<PretrainStep> steps;
  std::vector<EpochLoss> epochs;
};

/// Called after every optimizer step; useful for progress logging.
using StepCallback = std::function<void(std::size_t step, std::size_t total_steps, double loss)>;

PretrainResult pretrain(const PretrainCorpus& corpus, const ModelConfig& model, const TrainConfig& config,
                        const StepCallback& on_step = {});

struct FinetuneStep {
  int epoch = 0;
  double l_ce = 0.0;
  double l_shape = 0.0;
  double total = 0.0;
};

struct FinetuneResult {
  ModelCheckpoint checkpoint;  // parameters of the lowest-training-loss epoch
  std::vector<FinetuneStep> steps;
  std::vector<double> epoch_loss;
  std::vector<double> epoch_train_accuracy;  // train-mode predictions during the epoch
  int best_epoch = -1;                       // -1 when epochs == 0
};

FinetuneResult finetune(const ModelCheckpoint& checkpoint, const Dataset& dataset, const TrainConfig& config,
                        const StepCallback& on_step = {});

std::vector<int> predict(const UniShapeNet& net, const Dataset& dataset);
double accuracy(const UniShapeNet& net, const Dataset& dataset);
double accuracy(const ModelCheckpoint& checkpoint, const Dataset& dataset);

}  // namespace unishape
