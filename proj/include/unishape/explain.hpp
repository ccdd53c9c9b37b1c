#pragma once

// Attention-score export: per-scale window spans and scores for one sample,
// plus a time-step heatmap (max score of any covering window).

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "unishape/adapter.hpp"
#include "unishape/dataio.hpp"
#include "unishape/model.hpp"

namespace unishape {

struct ScaleExplanation {
  std::size_t window = 0;
  std::size_t stride = 0;
  std::vector<TimeSpan> spans;
  std::vector<double> scores;  // class-token slot excluded
};

struct ExplainRecord {
  std::size_t sample_index = 0;
  std::vector<ScaleExplanation> scales;
  int predicted_class = 0;
  std::optional<int> true_class;
};

ExplainRecord explain_sample(const UniShapeNet& net, const TimeSeriesSample& sample, std::size_t sample_index);
/// Throws ValidationError when the index is out of range.
ExplainRecord explain_sample(const UniShapeNet& net, const Dataset& dataset, std::size_t sample_index);

nlohmann::json to_json(const ExplainRecord& record);

/// One row per scale, `length` columns; NaN where no window covers a step.
std::vector<std::vector<double>> attention_heatmap(const ExplainRecord& record, std::size_t length);
/// Uncovered cells are written as empty fields.
std::string format_heatmap_csv(const std::vector<std::vector<double>>& heatmap);

/// Fraction of the scale's total score held by windows overlapping [first, last].
double motif_attention_fraction(const ScaleExplanation& scale, const MotifInterval& motif);

}  // namespace unishape
