#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "unishape/autograd.hpp"

namespace unishape {

struct ForestConfig {
  int num_trees = 200;
  int max_features = 0;  // 0 -> floor(sqrt(d))
  int min_samples_split = 2;
  std::uint64_t seed = 0;
};

/// Bagged CART classification trees with Gini splits and per-split feature
/// subsampling; prediction is a majority vote (lowest class on ties).
class RandomForest {
 public:
  explicit RandomForest(ForestConfig config = {}) : config_(config) {}

  void fit(const ag::Matrix& features, std::span<const int> labels);
  int predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& row) const;
  std::vector<int> predict(const ag::Matrix& features) const;

  int num_classes() const { return num_classes_; }
  std::size_t num_trees() const { return trees_.size(); }

 private:
  struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    int label = 0;
  };
  using Tree = std::vector<TreeNode>;

  Tree grow(const ag::Matrix& x, std::span<const int> y, std::vector<int> rows, std::mt19937_64& rng) const;

  ForestConfig config_;
  int num_classes_ = 0;
  ag::Index dim_ = 0;
  std::vector<Tree> trees_;
};

}  // namespace unishape
