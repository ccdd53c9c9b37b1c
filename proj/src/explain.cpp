#include "unishape/explain.hpp"

#include <cmath>
#include <limits>
#include <sstream>

#include "unishape/error.hpp"

namespace unishape {

ExplainRecord explain_sample(const UniShapeNet& net, const TimeSeriesSample& sample, std::size_t sample_index) {
  ag::NoGradGuard no_grad;
  const auto out = net.forward_backbone(sample.values);
  ExplainRecord rec;
  rec.sample_index = sample_index;
  const auto& windows = net.config().scales.windows;
  for (std::size_t q = 0; q < out.adapter.scales.size(); ++q) {
    const auto& batch = out.adapter.scales[q];
    ScaleExplanation s;
    s.window = windows[q].length;
    s.stride = windows[q].stride;
    s.spans = batch.spans;
    const Eigen::VectorXd scores = batch.shape_scores();
    s.scores.assign(scores.data(), scores.data() + scores.size());
    rec.scales.push_back(std::move(s));
  }
  rec.predicted_class = argmax_lowest(net.logits(out.encoded.class_token).value());
  rec.true_class = sample.label;
  return rec;
}

ExplainRecord explain_sample(const UniShapeNet& net, const Dataset& dataset, std::size_t sample_index) {
  if (sample_index >= dataset.size()) {
    throw ValidationError("sample index " + std::to_string(sample_index) + " out of range (dataset " + dataset.id +
                          " has " + std::to_string(dataset.size()) + " samples)");
  }
  return explain_sample(net, dataset.samples[sample_index], sample_index);
}

nlohmann::json to_json(const ExplainRecord& record) {
  nlohmann::json j;
  j["sample_index"] = record.sample_index;
  j["predicted_class"] = record.predicted_class;
  j["true_class"] = record.true_class ? nlohmann::json(*record.true_class) : nlohmann::json(nullptr);
  auto& scales = j["scales"] = nlohmann::json::array();
  for (const auto& s : record.scales) {
    nlohmann::json js;
    js["window"] = s.window;
    js["stride"] = s.stride;
    auto& windows = js["windows"] = nlohmann::json::array();
    for (std::size_t i = 0; i < s.spans.size(); ++i) {
      windows.push_back({{"span", {s.spans[i].start, s.spans[i].end}}, {"score", s.scores[i]}});
    }
    scales.push_back(std::move(js));
  }
  return j;
}

std::vector<std::vector<double>> attention_heatmap(const ExplainRecord& record, std::size_t length) {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  std::vector<std::vector<double>> rows;
  for (const auto& s : record.scales) {
    std::vector<double> row(length, nan);
    for (std::size_t i = 0; i < s.spans.size(); ++i) {
      for (std::size_t t = s.spans[i].start; t <= s.spans[i].end && t < length; ++t) {
        if (std::isnan(row[t]) || s.scores[i] > row[t]) row[t] = s.scores[i];
      }
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string format_heatmap_csv(const std::vector<std::vector<double>>& heatmap) {
  std::ostringstream out;
  out.precision(17);
  for (const auto& row : heatmap) {
    for (std::size_t t = 0; t < row.size(); ++t) {
      if (t) out << ',';
      if (!std::isnan(row[t])) out << row[t];
    }
    out << '\n';
  }
  return out.str();
}

double motif_attention_fraction(const ScaleExplanation& scale, const MotifInterval& motif) {
  double total = 0.0;
  double on = 0.0;
  for (std::size_t i = 0; i < scale.spans.size(); ++i) {
    total += scale.scores[i];
    if (motif.overlaps(scale.spans[i].start, scale.spans[i].end)) on += scale.scores[i];
  }
  return total > 0.0 ? on / total : 0.0;
}

}  // namespace unishape
