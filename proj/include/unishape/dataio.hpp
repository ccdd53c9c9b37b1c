#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace unishape {

inline constexpr std::size_t kSeriesLength = 512;

struct TimeSeriesSample {
  std::vector<double> values;
  std::optional<int> label;
  std::string dataset_id;
  std::optional<int> global_class;  // set only inside a PretrainCorpus
};

enum class Split { kTrain, kTest };

struct Dataset {
  std::string id;
  Split split = Split::kTrain;
  int num_classes = 0;
  // Original label value of each dense class id, ascending.
  std::vector<double> class_values;
  std::vector<TimeSeriesSample> samples;

  std::size_t size() const { return samples.size(); }
  std::size_t length() const { return samples.empty() ? 0 : samples.front().values.size(); }
  std::vector<int> labels() const;
};

struct PretrainCorpus {
  std::vector<TimeSeriesSample> samples;
  int num_global_classes = 0;
  std::vector<bool> label_mask;
  double label_ratio = 0.0;
  std::uint64_t seed = 0;
  // Per source dataset: id, first global class id, class count, sample count.
  struct Source {
    std::string id;
    int class_offset = 0;
    int num_classes = 0;
    std::size_t num_samples = 0;
  };
  std::vector<Source> sources;

  std::size_t num_labeled() const;
  nlohmann::json manifest() const;
};

/// Piecewise-linear resampling over the normalized index [0, 1]. Endpoints
/// are preserved and resizing to the input length is the identity.
std::vector<double> resize_series(std::span<const double> x, std::size_t target);

/// Replaces non-finite entries by linear interpolation between the nearest
/// finite neighbours; leading/trailing gaps copy the nearest finite value.
/// Throws ValidationError if no entry is finite.
std::vector<double> fill_missing(std::span<const double> x);

/// Reads a UCR-style TSV file (label first, tab separated). Labels are
/// re-indexed densely in ascending order of their numeric value unless
/// `class_values` supplies the mapping (used to align a test split with
/// its train split). Every row is resized to `length`.
Dataset load_tsv_dataset(const std::filesystem::path& path, Split split,
                         std::span<const double> class_values = {},
                         std::size_t length = kSeriesLength);

/// Loads NAME_TRAIN.tsv and NAME_TEST.tsv, mapping test labels through the
/// train split's class alphabet.
std::pair<Dataset, Dataset> load_ucr_pair(const std::filesystem::path& train_path,
                                          const std::filesystem::path& test_path,
                                          std::size_t length = kSeriesLength);

void write_tsv_dataset(const Dataset& dataset, const std::filesystem::path& path);

/// One univariate sample per channel, each inheriting label and dataset id.
std::vector<TimeSeriesSample> channel_independent_split(const std::vector<std::vector<double>>& channels,
                                                        std::optional<int> label,
                                                        const std::string& dataset_id);

/// Disjoint union of the class spaces of `datasets`, in input order, with a
/// stratified per-class label mask (ceil(label_ratio * class size) visible).
PretrainCorpus build_pretrain_corpus(const std::vector<Dataset>& datasets, double label_ratio,
                                     std::uint64_t seed);

struct MotifInterval {
  std::size_t first = 0;
  std::size_t last = 0;  // inclusive
  std::size_t width() const { return last - first + 1; }
  bool overlaps(std::size_t a, std::size_t b) const { return a <= last && b >= first; }
};

/// Two balanced classes of Gaussian noise plus a bump on `interval`: upward
/// for class 0, downward for class 1. Length kSeriesLength.
Dataset generate_motif_dataset(std::size_t n_per_class, MotifInterval interval, double noise_std,
                               std::uint64_t seed, Split split = Split::kTrain);

/// Throws ValidationError if any sample breaks the ingestion invariants.
void validate_dataset(const Dataset& dataset, std::size_t length = kSeriesLength);

}  // namespace unishape
