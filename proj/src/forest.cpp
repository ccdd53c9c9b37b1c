#include "unishape/forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "unishape/error.hpp"

namespace unishape {
namespace {

int majority(std::span<const int> counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

}  // namespace

void RandomForest::fit(const ag::Matrix& features, std::span<const int> labels) {
  if (features.rows() == 0) throw ValidationError("random forest: empty training set");
  if (static_cast<std::size_t>(features.rows()) != labels.size()) {
    throw ShapeError("random forest: one label per feature row required");
  }
  num_classes_ = 0;
  for (int y : labels) {
    if (y < 0) throw ValidationError("random forest: negative label");
    num_classes_ = std::max(num_classes_, y + 1);
  }
  dim_ = features.cols();
  trees_.clear();
  std::mt19937_64 rng(config_.seed);
  const auto n = static_cast<int>(features.rows());
  std::uniform_int_distribution<int> pick(0, n - 1);
  for (int t = 0; t < config_.num_trees; ++t) {
    std::vector<int> rows(static_cast<std::size_t>(n));
    for (auto& r : rows) r = pick(rng);
    trees_.push_back(grow(features, labels, std::move(rows), rng));
  }
}

RandomForest::Tree RandomForest::grow(const ag::Matrix& x, std::span<const int> y, std::vector<int> rows,
                                      std::mt19937_64& rng) const {
  const int d = static_cast<int>(x.cols());
  const int mtry = config_.max_features > 0
                       ? std::min(config_.max_features, d)
                       : std::max(1, static_cast<int>(std::floor(std::sqrt(static_cast<double>(d)))));
  Tree tree;
  struct Pending {
    int node;
    std::vector<int> rows;
  };
  std::vector<Pending> stack;
  tree.emplace_back();
  stack.push_back({0, std::move(rows)});

  std::vector<int> feature_pool(static_cast<std::size_t>(d));
  std::iota(feature_pool.begin(), feature_pool.end(), 0);
  const auto nc = static_cast<std::size_t>(num_classes_);

  while (!stack.empty()) {
    Pending job = std::move(stack.back());
    stack.pop_back();
    std::vector<int> counts(nc, 0);
    for (int r : job.rows) ++counts[static_cast<std::size_t>(y[static_cast<std::size_t>(r)])];
    tree[static_cast<std::size_t>(job.node)].label = majority(counts);
    const bool pure = std::count_if(counts.begin(), counts.end(), [](int c) { return c > 0; }) <= 1;
    if (pure || static_cast<int>(job.rows.size()) < config_.min_samples_split) continue;

    double best_score = -1.0;
    int best_feature = -1;
    double best_threshold = 0.0;
    const double parent_score = [&] {
      double s = 0.0;
      for (int c : counts) s += static_cast<double>(c) * c;
      return s / static_cast<double>(job.rows.size());
    }();

    // Partial Fisher-Yates draw of mtry distinct features.
    for (int k = 0; k < mtry; ++k) {
      std::uniform_int_distribution<int> pick(k, d - 1);
      std::swap(feature_pool[static_cast<std::size_t>(k)], feature_pool[static_cast<std::size_t>(pick(rng))]);
    }
    std::vector<int> sorted = job.rows;
    for (int k = 0; k < mtry; ++k) {
      const int f = feature_pool[static_cast<std::size_t>(k)];
      std::sort(sorted.begin(), sorted.end(), [&](int a, int b) { return x(a, f) < x(b, f); });
      std::vector<int> left(nc, 0);
      std::vector<int> right = counts;
      double left_sq = 0.0;
      double right_sq = 0.0;
      for (int c : right) right_sq += static_cast<double>(c) * c;
      const std::size_t total = sorted.size();
      for (std::size_t i = 0; i + 1 < total; ++i) {
        const auto c = static_cast<std::size_t>(y[static_cast<std::size_t>(sorted[i])]);
        left_sq += 2.0 * left[c] + 1.0;
        right_sq -= 2.0 * right[c] - 1.0;
        ++left[c];
        --right[c];
        const double xa = x(sorted[i], f);
        const double xb = x(sorted[i + 1], f);
        if (!(xa < xb)) continue;
        const auto nl = static_cast<double>(i + 1);
        const auto nr = static_cast<double>(total - i - 1);
        const double score = left_sq / nl + right_sq / nr;
        if (score > best_score + 1e-12) {
          best_score = score;
          best_feature = f;
          best_threshold = xa + (xb - xa) * 0.5;
          if (!(best_threshold > xa)) best_threshold = xb;
        }
      }
    }
    if (best_feature < 0 || best_score <= parent_score + 1e-12) continue;

    std::vector<int> lrows;
    std::vector<int> rrows;
    for (int r : job.rows) (x(r, best_feature) < best_threshold ? lrows : rrows).push_back(r);
    if (lrows.empty() || rrows.empty()) continue;
    const int li = static_cast<int>(tree.size());
    tree.emplace_back();
    tree.emplace_back();
    auto& node = tree[static_cast<std::size_t>(job.node)];
    node.feature = best_feature;
    node.threshold = best_threshold;
    node.left = li;
    node.right = li + 1;
    stack.push_back({li, std::move(lrows)});
    stack.push_back({li + 1, std::move(rrows)});
  }
  return tree;
}

int RandomForest::predict_one(const Eigen::Ref<const Eigen::RowVectorXd>& row) const {
  if (trees_.empty()) throw ValidationError("random forest: predict before fit");
  if (row.size() != dim_) throw ShapeError("random forest: feature dimension mismatch");
  std::vector<int> votes(static_cast<std::size_t>(num_classes_), 0);
  for (const auto& tree : trees_) {
    int i = 0;
    while (tree[static_cast<std::size_t>(i)].feature >= 0) {
      const auto& node = tree[static_cast<std::size_t>(i)];
      i = row(node.feature) < node.threshold ? node.left : node.right;
    }
    ++votes[static_cast<std::size_t>(tree[static_cast<std::size_t>(i)].label)];
  }
  return majority(votes);
}

std::vector<int> RandomForest::predict(const ag::Matrix& features) const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(features.rows()));
  for (ag::Index r = 0; r < features.rows(); ++r) out.push_back(predict_one(features.row(r)));
  return out;
}

}  // namespace unishape
