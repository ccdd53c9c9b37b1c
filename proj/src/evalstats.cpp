#include "unishape/evalstats.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "unishape/error.hpp"
#include "unishape/forest.hpp"

namespace unishape {
namespace {

std::string trim(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

// Row order: label, then features lexicographically.
std::vector<ag::Index> canonical_order(const FeatureMatrix& f) {
  std::vector<ag::Index> order(static_cast<std::size_t>(f.rows.rows()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](ag::Index a, ag::Index b) {
    const int la = f.labels[static_cast<std::size_t>(a)];
    const int lb = f.labels[static_cast<std::size_t>(b)];
    if (la != lb) return la < lb;
    for (ag::Index k = 0; k < f.rows.cols(); ++k) {
      if (f.rows(a, k) != f.rows(b, k)) return f.rows(a, k) < f.rows(b, k);
    }
    return false;
  });
  return order;
}

}  // namespace

FeatureMatrix extract_features(const UniShapeNet& net, const Dataset& dataset) {
  FeatureMatrix f;
  f.dataset_id = dataset.id;
  f.rows.resize(static_cast<ag::Index>(dataset.size()), static_cast<ag::Index>(net.config().dim));
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (s.values.size() != net.config().series_length) {
      throw ShapeError("extract_features: sample length " + std::to_string(s.values.size()) +
                       " != model series length " + std::to_string(net.config().series_length));
    }
    f.rows.row(static_cast<ag::Index>(i)) = net.embed(s.values);
    f.labels.push_back(s.label.value_or(-1));
  }
  return f;
}

FeatureMatrix extract_features(const ModelCheckpoint& checkpoint, const Dataset& dataset,
                               const std::string& checkpoint_id) {
  const ModelState state = restore_model(checkpoint);
  FeatureMatrix f = extract_features(state.query, dataset);
  f.checkpoint_id = checkpoint_id;
  return f;
}

double zero_shot_eval(const FeatureMatrix& train, const FeatureMatrix& test, std::uint64_t seed) {
  if (train.rows.cols() != test.rows.cols()) throw ShapeError("zero_shot_eval: feature dimension mismatch");
  if (test.rows.rows() == 0) throw ValidationError("zero_shot_eval: empty test set");
  std::vector<int> distinct = train.labels;
  std::sort(distinct.begin(), distinct.end());
  distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
  if (!distinct.empty() && distinct.front() < 0) throw ValidationError("zero_shot_eval: unlabeled training row");
  if (distinct.size() < 2) throw ValidationError("zero_shot_eval: training set has a single class");

  const auto order = canonical_order(train);
  ag::Matrix x(train.rows.rows(), train.rows.cols());
  std::vector<int> y;
  y.reserve(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    x.row(static_cast<ag::Index>(i)) = train.rows.row(order[i]);
    y.push_back(train.labels[static_cast<std::size_t>(order[i])]);
  }
  ForestConfig fc;
  fc.num_trees = kForestTrees;
  fc.seed = seed;
  RandomForest forest(fc);
  forest.fit(x, y);
  const auto pred = forest.predict(test.rows);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] == test.labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

std::vector<double> rank_descending(std::span<const double> values) {
  const std::size_t m = values.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
  std::vector<double> ranks(m);
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j + 1 < m && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

std::vector<double> average_ranks(const std::vector<std::vector<double>>& table) {
  if (table.empty()) throw ValidationError("average_ranks: no datasets");
  const std::size_t m = table.front().size();
  if (m < 2) throw ValidationError("average_ranks: need at least 2 methods");
  std::vector<double> sum(m, 0.0);
  for (const auto& row : table) {
    if (row.size() != m) throw ValidationError("average_ranks: incomplete accuracy table");
    for (double v : row) {
      if (!std::isfinite(v)) throw ValidationError("average_ranks: missing or non-finite entry");
    }
    const auto r = rank_descending(row);
    for (std::size_t k = 0; k < m; ++k) sum[k] += r[k];
  }
  for (auto& s : sum) s /= static_cast<double>(table.size());
  return sum;
}

WilcoxonResult wilcoxon_signed_rank(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("wilcoxon_signed_rank: length mismatch");
  if (a.empty()) throw ValidationError("wilcoxon_signed_rank: no paired observations");

  std::vector<double> diffs;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    if (std::abs(d) > kWilcoxonTolerance) diffs.push_back(d);
  }
  WilcoxonResult res;
  res.n_effective = diffs.size();
  if (diffs.empty()) return res;  // all ties: p = 1

  const std::size_t n = diffs.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return std::abs(diffs[x]) < std::abs(diffs[y]); });
  // Doubled ranks are integers under the average-rank convention.
  std::vector<long> rank2(n);
  std::vector<std::size_t> tie_sizes;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && std::abs(diffs[order[j + 1]]) - std::abs(diffs[order[j]]) <= kWilcoxonTolerance) ++j;
    const long r2 = static_cast<long>(i + j + 2);  // 2 * average of (i+1 .. j+1)
    for (std::size_t k = i; k <= j; ++k) rank2[order[k]] = r2;
    tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }
  long w2 = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (diffs[k] > 0) w2 += rank2[k];
  }
  res.w_plus = 0.5 * static_cast<double>(w2);

  if (n <= kWilcoxonExactLimit) {
    // Distribution of the doubled statistic over all 2^n sign patterns.
    const long max_sum = std::accumulate(rank2.begin(), rank2.end(), 0L);
    std::vector<double> count(static_cast<std::size_t>(max_sum) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (long r : rank2) {
      for (long s = reach; s >= 0; --s) {
        if (count[static_cast<std::size_t>(s)] != 0.0) count[static_cast<std::size_t>(s + r)] += count[static_cast<std::size_t>(s)];
      }
      reach += r;
    }
    double tail = 0.0;
    for (long s = w2; s <= max_sum; ++s) tail += count[static_cast<std::size_t>(s)];
    res.p_value = tail / std::ldexp(1.0, static_cast<int>(n));
    res.exact = true;
    return res;
  }

  const auto nn = static_cast<double>(n);
  const double mean = nn * (nn + 1.0) / 4.0;
  double var = nn * (nn + 1.0) * (2.0 * nn + 1.0) / 24.0;
  for (std::size_t t : tie_sizes) {
    const auto tt = static_cast<double>(t);
    var -= (tt * tt * tt - tt) / 48.0;
  }
  res.exact = false;
  if (var <= 0.0) {
    res.p_value = res.w_plus > mean ? 0.0 : 1.0;
    return res;
  }
  const double z = (res.w_plus - mean - 0.5) / std::sqrt(var);
  res.p_value = 0.5 * std::erfc(z / std::sqrt(2.0));
  return res;
}

void AccuracyTable::set(const std::string& dataset, const std::string& method, double accuracy) {
  if (std::find(datasets.begin(), datasets.end(), dataset) == datasets.end()) datasets.push_back(dataset);
  if (std::find(methods.begin(), methods.end(), method) == methods.end()) methods.push_back(method);
  values[{dataset, method}] = accuracy;
}

std::vector<std::vector<double>> AccuracyTable::dense() const {
  std::vector<std::vector<double>> out;
  for (const auto& d : datasets) {
    std::vector<double> row;
    for (const auto& m : methods) {
      auto it = values.find({d, m});
      if (it == values.end()) throw ValidationError("accuracy table: missing entry for " + d + "/" + m);
      row.push_back(it->second);
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<double> AccuracyTable::column(const std::string& method) const {
  std::vector<double> col;
  for (const auto& d : datasets) {
    auto it = values.find({d, method});
    if (it == values.end()) throw ValidationError("accuracy table: missing entry for " + d + "/" + method);
    col.push_back(it->second);
  }
  return col;
}

AccuracyTable parse_accuracy_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t row = 0;
  bool header = false;
  AccuracyTable table;
  while (std::getline(in, line)) {
    ++row;
    if (trim(line).empty()) continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(trim(f));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (!header) {
      if (fields != std::vector<std::string>{"dataset", "method", "accuracy"}) {
        throw ParseError("row " + std::to_string(row) + ": expected header 'dataset,method,accuracy'");
      }
      header = true;
      continue;
    }
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw ParseError("row " + std::to_string(row) + ": expected 3 fields 'dataset,method,accuracy'");
    }
    double acc = 0.0;
    try {
      std::size_t used = 0;
      acc = std::stod(fields[2], &used);
      if (used != fields[2].size()) throw std::invalid_argument(fields[2]);
    } catch (const std::logic_error&) {
      throw ParseError("row " + std::to_string(row) + ": accuracy '" + fields[2] + "' is not a number");
    }
    if (!(acc >= 0.0 && acc <= 1.0)) {
      throw ParseError("row " + std::to_string(row) + ": accuracy " + fields[2] + " outside [0, 1]");
    }
    if (table.values.count({fields[0], fields[1]})) {
      throw ParseError("row " + std::to_string(row) + ": duplicate entry " + fields[0] + "/" + fields[1]);
    }
    table.set(fields[0], fields[1], acc);
  }
  if (!header) throw ParseError("row 1: missing header 'dataset,method,accuracy'");
  return table;
}

AccuracyTable read_accuracy_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return parse_accuracy_csv(buf.str());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

std::string format_accuracy_csv(const AccuracyTable& table) {
  std::ostringstream out;
  out.precision(17);
  out << "dataset,method,accuracy\n";
  for (const auto& d : table.datasets) {
    for (const auto& m : table.methods) {
      auto it = table.values.find({d, m});
      if (it != table.values.end()) out << d << ',' << m << ',' << it->second << '\n';
    }
  }
  return out.str();
}

EvalReport evaluate_table(const AccuracyTable& table) {
  EvalReport r;
  r.table = table;
  const auto dense = table.dense();
  if (table.methods.empty()) throw ValidationError("evaluate_table: no methods");
  for (std::size_t k = 0; k < table.methods.size(); ++k) {
    double s = 0.0;
    for (const auto& row : dense) s += row[k];
    r.avg_acc[table.methods[k]] = s / static_cast<double>(dense.size());
  }
  if (table.methods.size() >= 2) {
    const auto ranks = average_ranks(dense);
    for (std::size_t k = 0; k < ranks.size(); ++k) r.avg_rank[table.methods[k]] = ranks[k];
    for (const auto& a : table.methods) {
      for (const auto& b : table.methods) {
        if (a == b) continue;
        r.p_values[{a, b}] = wilcoxon_signed_rank(table.column(a), table.column(b)).p_value;
      }
    }
  } else {
    r.avg_rank[table.methods.front()] = 1.0;
  }
  return r;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  auto& per = j["per_dataset_accuracy"] = nlohmann::json::object();
  for (const auto& [key, acc] : report.table.values) per[key.first][key.second] = acc;
  j["methods"] = report.table.methods;
  j["datasets"] = report.table.datasets;
  j["avg_acc"] = report.avg_acc;
  j["avg_rank"] = report.avg_rank;
  auto& p = j["p_values"] = nlohmann::json::object();
  for (const auto& [key, pv] : report.p_values) p[key.first][key.second] = pv;
  j["p_value_alternative"] = "row method > column method (one-sided Wilcoxon signed-rank)";
  return j;
}

}  // namespace unishape
