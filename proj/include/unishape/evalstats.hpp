#pragma once

// Zero-shot feature extraction and the classifier-comparison statistics:
// average accuracy, average rank and the one-sided Wilcoxon signed-rank test.

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "unishape/autograd.hpp"
#include "unishape/checkpoint.hpp"
#include "unishape/dataio.hpp"

namespace unishape {

struct FeatureMatrix {
  ag::Matrix rows;  // n x d class-token embeddings
  std::vector<int> labels;
  std::string checkpoint_id;
  std::string dataset_id;
};

FeatureMatrix extract_features(const ModelCheckpoint& checkpoint, const Dataset& dataset,
                               const std::string& checkpoint_id = "");
FeatureMatrix extract_features(const UniShapeNet& net, const Dataset& dataset);

inline constexpr int kForestTrees = 200;

/// Random forest (200 trees, sqrt(d) features per split) on train rows,
/// accuracy on test rows. Training rows are put in a canonical order first,
/// so the result does not depend on their input order.
double zero_shot_eval(const FeatureMatrix& train, const FeatureMatrix& test, std::uint64_t seed);

/// Mean rank per method over datasets (rank 1 = highest accuracy, ties get
/// the average of their positions). table[dataset][method].
std::vector<double> average_ranks(const std::vector<std::vector<double>>& table);

/// Ranks of one row, average-rank convention.
std::vector<double> rank_descending(std::span<const double> values);

struct WilcoxonResult {
  double w_plus = 0.0;
  std::size_t n_effective = 0;
  double p_value = 1.0;  // one-sided, H1: a > b
  bool exact = true;
};

inline constexpr std::size_t kWilcoxonExactLimit = 20;
/// Differences with |d| below this are treated as zero, and |d| values
/// closer than this share a rank.
inline constexpr double kWilcoxonTolerance = 1e-12;

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b);

/// Long-format accuracy table (CSV header `dataset,method,accuracy`).
struct AccuracyTable {
  std::vector<std::string> datasets;  // first-seen order
  std::vector<std::string> methods;   // first-seen order
  std::map<std::pair<std::string, std::string>, double> values;

  void set(const std::string& dataset, const std::string& method, double accuracy);
  /// Dense datasets x methods matrix; throws if any entry is missing.
  std::vector<std::vector<double>> dense() const;
  std::vector<double> column(const std::string& method) const;
};

AccuracyTable read_accuracy_csv(const std::filesystem::path& path);
AccuracyTable parse_accuracy_csv(const std::string& text);
std::string format_accuracy_csv(const AccuracyTable& table);

struct EvalReport {
  AccuracyTable table;
  std::map<std::string, double> avg_acc;
  std::map<std::string, double> avg_rank;
  std::map<std::pair<std::string, std::string>, double> p_values;  // (A, B) -> p(A > B)
};

EvalReport evaluate_table(const AccuracyTable& table);
nlohmann::json to_json(const EvalReport& report);

}  // namespace unishape
