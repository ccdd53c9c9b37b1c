#include "unishape/dataio.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <random>
#include <sstream>

#include "unishape/error.hpp"

namespace unishape {
namespace {

double parse_number(std::string_view token, std::size_t line_no, const std::filesystem::path& path) {
  while (!token.empty() && (token.front() == ' ' || token.front() == '\r')) token.remove_prefix(1);
  while (!token.empty() && (token.back() == ' ' || token.back() == '\r')) token.remove_suffix(1);
  if (token == "NaN" || token == "nan" || token == "NAN" || token == "?") {
    return std::numeric_limits<double>::quiet_NaN();
  }
  double v = 0.0;
  const auto* first = token.data();
  const auto* last = token.data() + token.size();
  if (!token.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (token.empty() || ec != std::errc() || ptr != last) {
    throw ParseError(path.string() + ":" + std::to_string(line_no) + ": not a number: '" +
                     std::string(token) + "'");
  }
  return v;
}

std::string dataset_id_from_path(const std::filesystem::path& path) {
  std::string stem = path.stem().string();
  for (const char* suffix : {"_TRAIN", "_TEST"}) {
    const std::string s(suffix);
    if (stem.size() > s.size() && stem.compare(stem.size() - s.size(), s.size(), s) == 0) {
      return stem.substr(0, stem.size() - s.size());
    }
  }
  return stem;
}

}  // namespace

std::vector<int> Dataset::labels() const {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label.value_or(-1));
  return out;
}

std::size_t PretrainCorpus::num_labeled() const {
  return static_cast<std::size_t>(std::count(label_mask.begin(), label_mask.end(), true));
}

nlohmann::json PretrainCorpus::manifest() const {
  nlohmann::json j;
  j["label_ratio"] = label_ratio;
  j["seed"] = seed;
  j["num_global_classes"] = num_global_classes;
  j["num_samples"] = samples.size();
  j["num_labeled"] = num_labeled();
  auto& srcs = j["datasets"] = nlohmann::json::array();
  for (const auto& s : sources) {
    srcs.push_back({{"id", s.id},
                    {"class_offset", s.class_offset},
                    {"num_classes", s.num_classes},
                    {"num_samples", s.num_samples}});
  }
  return j;
}

std::vector<double> resize_series(std::span<const double> x, std::size_t target) {
  if (x.size() < 2) throw ValidationError("resize_series: need at least 2 points to interpolate");
  if (target < 2) throw ValidationError("resize_series: target length must be at least 2");
  if (target == x.size()) return {x.begin(), x.end()};
  std::vector<double> out(target);
  const double step = static_cast<double>(x.size() - 1) / static_cast<double>(target - 1);
  for (std::size_t j = 0; j < target; ++j) {
    const double pos = static_cast<double>(j) * step;
    auto lo = static_cast<std::size_t>(pos);
    if (lo >= x.size() - 1) lo = x.size() - 2;
    const double frac = pos - static_cast<double>(lo);
    out[j] = x[lo] + (x[lo + 1] - x[lo]) * frac;
  }
  out.front() = x.front();
  out.back() = x.back();
  return out;
}

std::vector<double> fill_missing(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  std::vector<std::size_t> finite;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (std::isfinite(out[i])) finite.push_back(i);
  }
  if (finite.empty()) throw ValidationError("series has no finite values");
  if (finite.size() == out.size()) return out;
  for (std::size_t i = 0; i < finite.front(); ++i) out[i] = out[finite.front()];
  for (std::size_t i = finite.back() + 1; i < out.size(); ++i) out[i] = out[finite.back()];
  for (std::size_t k = 0; k + 1 < finite.size(); ++k) {
    const std::size_t a = finite[k];
    const std::size_t b = finite[k + 1];
    for (std::size_t i = a + 1; i < b; ++i) {
      const double t = static_cast<double>(i - a) / static_cast<double>(b - a);
      out[i] = out[a] + (out[b] - out[a]) * t;
    }
  }
  return out;
}

Dataset load_tsv_dataset(const std::filesystem::path& path, Split split,
                         std::span<const double> class_values, std::size_t length) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());

  std::vector<double> raw_labels;
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    std::vector<double> fields;
    std::size_t start = 0;
    while (true) {
      const std::size_t tab = line.find('\t', start);
      const std::string_view tok(line.data() + start,
                                 (tab == std::string::npos ? line.size() : tab) - start);
      fields.push_back(parse_number(tok, line_no, path));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() < 3) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) +
                       ": expected a label and at least 2 values");
    }
    if (!std::isfinite(fields[0])) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": label is not finite");
    }
    raw_labels.push_back(fields[0]);
    rows.emplace_back(fields.begin() + 1, fields.end());
  }

  Dataset ds;
  ds.id = dataset_id_from_path(path);
  ds.split = split;
  if (class_values.empty()) {
    ds.class_values = raw_labels;
    std::sort(ds.class_values.begin(), ds.class_values.end());
    ds.class_values.erase(std::unique(ds.class_values.begin(), ds.class_values.end()),
                          ds.class_values.end());
  } else {
    ds.class_values.assign(class_values.begin(), class_values.end());
  }
  ds.num_classes = static_cast<int>(ds.class_values.size());
  if (split == Split::kTrain && ds.num_classes < 2) {
    throw ValidationError(path.string() + ": train split needs at least 2 distinct labels, found " +
                          std::to_string(ds.num_classes));
  }

  ds.samples.reserve(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto it = std::lower_bound(ds.class_values.begin(), ds.class_values.end(), raw_labels[i]);
    if (it == ds.class_values.end() || *it != raw_labels[i]) {
      throw ValidationError(path.string() + ": label " + std::to_string(raw_labels[i]) +
                            " is not in the train split's class set");
    }
    TimeSeriesSample s;
    s.values = resize_series(fill_missing(rows[i]), length);
    s.label = static_cast<int>(it - ds.class_values.begin());
    s.dataset_id = ds.id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

std::pair<Dataset, Dataset> load_ucr_pair(const std::filesystem::path& train_path,
                                          const std::filesystem::path& test_path,
                                          std::size_t length) {
  Dataset train = load_tsv_dataset(train_path, Split::kTrain, {}, length);
  Dataset test = load_tsv_dataset(test_path, Split::kTest, train.class_values, length);
  return {std::move(train), std::move(test)};
}

void write_tsv_dataset(const Dataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out.precision(17);
  for (const auto& s : dataset.samples) {
    const int label = s.label.value_or(0);
    if (!dataset.class_values.empty()) {
      out << dataset.class_values[static_cast<std::size_t>(label)];
    } else {
      out << label;
    }
    for (double v : s.values) out << '\t' << v;
    out << '\n';
  }
}

std::vector<TimeSeriesSample> channel_independent_split(const std::vector<std::vector<double>>& channels,
                                                        std::optional<int> label,
                                                        const std::string& dataset_id) {
  if (channels.empty()) throw ValidationError("channel_independent_split: no channels");
  const std::size_t len = channels.front().size();
  std::vector<TimeSeriesSample> out;
  out.reserve(channels.size());
  for (const auto& ch : channels) {
    if (ch.size() != len) throw ValidationError("channel_independent_split: ragged channels");
    out.push_back(TimeSeriesSample{ch, label, dataset_id, std::nullopt});
  }
  return out;
}

PretrainCorpus build_pretrain_corpus(const std::vector<Dataset>& datasets, double label_ratio,
                                     std::uint64_t seed) {
  if (!(label_ratio >= 0.0 && label_ratio <= 1.0)) {
    throw ValidationError("label_ratio must lie in [0, 1]");
  }
  PretrainCorpus corpus;
  corpus.label_ratio = label_ratio;
  corpus.seed = seed;
  std::mt19937_64 rng(seed);
  int offset = 0;
  for (const auto& ds : datasets) {
    if (ds.split != Split::kTrain) {
      throw ValidationError("pretraining corpus accepts train splits only (" + ds.id + ")");
    }
    const std::size_t base = corpus.samples.size();
    std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(ds.num_classes));
    for (std::size_t i = 0; i < ds.samples.size(); ++i) {
      TimeSeriesSample s = ds.samples[i];
      if (!s.label || *s.label < 0 || *s.label >= ds.num_classes) {
        throw ValidationError("dataset " + ds.id + " has an unlabeled or out-of-range sample");
      }
      s.global_class = offset + *s.label;
      by_class[static_cast<std::size_t>(*s.label)].push_back(base + i);
      corpus.samples.push_back(std::move(s));
    }
    corpus.label_mask.resize(corpus.samples.size(), false);
    for (auto& members : by_class) {
      std::shuffle(members.begin(), members.end(), rng);
      const auto take = static_cast<std::size_t>(
          std::ceil(label_ratio * static_cast<double>(members.size()) - 1e-9));
      for (std::size_t k = 0; k < std::min(take, members.size()); ++k) corpus.label_mask[members[k]] = true;
    }
    corpus.sources.push_back({ds.id, offset, ds.num_classes, ds.samples.size()});
    offset += ds.num_classes;
  }
  corpus.num_global_classes = offset;
  return corpus;
}

Dataset generate_motif_dataset(std::size_t n_per_class, MotifInterval interval, double noise_std,
                               std::uint64_t seed, Split split) {
  if (n_per_class < 1) throw ValidationError("generate_motif_dataset: n_per_class must be >= 1");
  if (interval.last < interval.first) throw ValidationError("generate_motif_dataset: empty motif interval");
  if (interval.last >= kSeriesLength) {
    throw ValidationError("generate_motif_dataset: motif interval exceeds series length");
  }
  if (noise_std < 0.0) throw ValidationError("generate_motif_dataset: noise_std must be >= 0");

  Dataset ds;
  ds.id = "motif";
  ds.split = split;
  ds.num_classes = 2;
  ds.class_values = {0.0, 1.0};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double width = static_cast<double>(interval.width());
  for (std::size_t i = 0; i < 2 * n_per_class; ++i) {
    const int label = static_cast<int>(i % 2);
    TimeSeriesSample s;
    s.values.resize(kSeriesLength);
    for (auto& v : s.values) v = noise_std * noise(rng);
    const double sign = label == 0 ? 1.0 : -1.0;
    for (std::size_t t = interval.first; t <= interval.last; ++t) {
      const double phase = static_cast<double>(t - interval.first + 1) / (width + 1.0);
      s.values[t] += sign * std::sin(std::numbers::pi * phase);
    }
    s.label = label;
    s.dataset_id = ds.id;
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

void validate_dataset(const Dataset& dataset, std::size_t length) {
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const auto& s = dataset.samples[i];
    if (s.values.size() != length) {
      throw ValidationError(dataset.id + "[" + std::to_string(i) + "]: length " +
                            std::to_string(s.values.size()) + " != " + std::to_string(length));
    }
    for (double v : s.values) {
      if (!std::isfinite(v)) throw ValidationError(dataset.id + "[" + std::to_string(i) + "]: non-finite value");
    }
    if (s.label && (*s.label < 0 || *s.label >= dataset.num_classes)) {
      throw ValidationError(dataset.id + "[" + std::to_string(i) + "]: label out of range");
    }
  }
}

}  // namespace unishape
