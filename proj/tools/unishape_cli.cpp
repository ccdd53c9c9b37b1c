// unishape: pretrain, fine-tune, evaluate and explain shape-token models.
//
// Exit codes: 0 success, 2 usage error, 1 runtime error.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "unishape/checkpoint.hpp"
#include "unishape/dataio.hpp"
#include "unishape/error.hpp"
#include "unishape/evalstats.hpp"
#include "unishape/explain.hpp"
#include "unishape/trainer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace unishape;

namespace {

struct UsageError : Error {
  using Error::Error;
};

constexpr const char* kTrainSuffix = "_TRAIN.tsv";
constexpr const char* kTestSuffix = "_TEST.tsv";

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// NAME_TRAIN.tsv files under `dir` (recursive), sorted by path.
std::vector<fs::path> find_train_files(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw UsageError("--data: not a directory: " + dir.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::recursive_directory_iterator(dir)) {
    if (entry.is_regular_file() && ends_with(entry.path().filename().string(), kTrainSuffix)) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  if (out.empty()) throw UsageError("--data: no *" + std::string(kTrainSuffix) + " files in " + dir.string());
  return out;
}

fs::path test_path_for(const fs::path& train) {
  std::string name = train.filename().string();
  name.replace(name.size() - std::string(kTrainSuffix).size(), std::string::npos, kTestSuffix);
  return train.parent_path() / name;
}

std::pair<Dataset, Dataset> load_pair(const fs::path& train) {
  const fs::path test = test_path_for(train);
  if (!fs::exists(test)) throw Error("missing test split for " + train.string() + ": " + test.string());
  return load_ucr_pair(train, test);
}

// --data may name a directory holding one train/test pair, or the train file itself.
std::pair<Dataset, Dataset> load_single_pair(const fs::path& data) {
  if (fs::is_regular_file(data)) {
    if (!ends_with(data.filename().string(), kTrainSuffix)) {
      throw UsageError("--data: expected a *" + std::string(kTrainSuffix) + " file, got " + data.string());
    }
    return load_pair(data);
  }
  const auto files = find_train_files(data);
  if (files.size() != 1) {
    throw UsageError("--data: expected exactly one train/test pair in " + data.string() + ", found " +
                     std::to_string(files.size()));
  }
  return load_pair(files.front());
}

ModelCheckpoint load_checkpoint_arg(const fs::path& dir) {
  if (!fs::exists(dir)) throw Error("checkpoint not found: " + dir.string());
  return load_checkpoint(dir);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

void prepare_out(const fs::path& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw Error("cannot create output directory " + out.string() + ": " + ec.message());
}

std::string fmt(double v) {
  std::ostringstream s;
  s.precision(17);
  s << v;
  return s.str();
}

StepCallback progress(const std::string& what, bool quiet) {
  if (quiet) return {};
  return [what](std::size_t step, std::size_t total, double loss) {
    if (step == total || step % 10 == 0) {
      std::cerr << what << " step " << step << "/" << total << " loss " << loss << "\n";
    }
  };
}

// Training flags shared by pretrain and finetune.
void add_train_flags(CLI::App* cmd, TrainConfig& t) {
  cmd->add_option("--epochs", t.epochs, "Training epochs")->check(CLI::NonNegativeNumber)->capture_default_str();
  cmd->add_option("--batch-size", t.batch_size, "Mini-batch size")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--lr", t.learning_rate, "Base learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--epsilon", t.contrastive.epsilon, "Fraction of shape tokens in the shape loss")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--lambda", t.contrastive.lambda, "Shape-loss weight inside the prototype loss")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  cmd->add_option("--tau", t.contrastive.tau, "Contrastive temperature")->check(CLI::PositiveNumber)->capture_default_str();
  cmd->add_option("--seed", t.seed, "Random seed")->capture_default_str();
}

struct Args {
  fs::path data;
  fs::path checkpoint;
  fs::path out;
  std::string scales = "64,32,16,8,4";
  ModelConfig model;
  TrainConfig pre = TrainConfig::pretrain_defaults();
  TrainConfig fine = TrainConfig::finetune_defaults();
  std::uint64_t seed = 0;
  std::size_t sample_index = 0;
  bool quiet = false;
  // synth
  std::size_t n_per_class = 16;
  std::size_t n_test_per_class = 16;
  std::size_t motif_first = 240;
  std::size_t motif_last = 303;
  double noise = 0.3;
  std::string name = "Motif";
};

// Rejected flag values are usage errors, not runtime failures.
template <class F>
void as_usage(F&& check) {
  try {
    check();
  } catch (const Error& e) {
    throw UsageError(e.what());
  }
}

json run_header(const std::string& command, const Args& a) {
  return {{"command", command},
          {"data", a.data.string()},
          {"checkpoint", a.checkpoint.string()},
          {"out", a.out.string()}};
}

int run_pretrain(Args& a) {
  as_usage([&] {
    a.model.scales = ScaleConfig::parse(a.scales);
    a.model.validate();
    a.pre.validate();
  });
  const auto files = find_train_files(a.data);
  prepare_out(a.out);

  std::vector<Dataset> sets;
  for (const auto& f : files) sets.push_back(load_tsv_dataset(f, Split::kTrain));
  const PretrainCorpus corpus = build_pretrain_corpus(sets, a.pre.label_ratio, a.pre.seed);
  if (!a.quiet) {
    std::cerr << "corpus: " << corpus.samples.size() << " samples, " << corpus.num_global_classes
              << " classes, " << corpus.num_labeled() << " labeled\n";
  }
  const PretrainResult result = pretrain(corpus, a.model, a.pre, progress("pretrain", a.quiet));
  save_checkpoint(result.checkpoint, a.out);

  std::string csv = "epoch,l_proto,l_self,total\n";
  for (const auto& e : result.epochs) {
    csv += std::to_string(e.epoch) + "," + fmt(e.l_proto) + "," + fmt(e.l_self) + "," + fmt(e.total) + "\n";
  }
  write_text(a.out / "losses.csv", csv);
  write_json(a.out / "corpus.json", corpus.manifest());
  json run = run_header("pretrain", a);
  run["model"] = a.model;
  run["train"] = a.pre;
  write_json(a.out / "run_config.json", run);
  return 0;
}

int run_finetune(Args& a) {
  as_usage([&] { a.fine.validate(); });
  const ModelCheckpoint ck = load_checkpoint_arg(a.checkpoint);
  auto [train, test] = load_single_pair(a.data);
  prepare_out(a.out);

  const FinetuneResult result = finetune(ck, train, a.fine, progress("finetune", a.quiet));
  const double test_acc = accuracy(result.checkpoint, test);
  save_checkpoint(result.checkpoint, a.out);
  json metrics;
  metrics["dataset"] = train.id;
  metrics["train_loss_curve"] = result.epoch_loss;
  metrics["train_accuracy_curve"] = result.epoch_train_accuracy;
  metrics["best_epoch"] = result.best_epoch;
  metrics["test_accuracy"] = test_acc;
  write_json(a.out / "metrics.json", metrics);
  json run = run_header("finetune", a);
  run["model"] = ck.model_config();
  run["train"] = a.fine;
  write_json(a.out / "run_config.json", run);
  if (!a.quiet) std::cerr << "test accuracy " << test_acc << "\n";
  return 0;
}

int run_zeroshot(Args& a) {
  const ModelCheckpoint ck = load_checkpoint_arg(a.checkpoint);
  const auto files = find_train_files(a.data);
  prepare_out(a.out);
  const ModelState state = restore_model(ck);
  const std::string method = a.checkpoint.filename().empty() ? a.checkpoint.parent_path().filename().string()
                                                              : a.checkpoint.filename().string();
  AccuracyTable table;
  for (const auto& f : files) {
    auto [train, test] = load_pair(f);
    const FeatureMatrix tr = extract_features(state.query, train);
    const FeatureMatrix te = extract_features(state.query, test);
    const double acc = zero_shot_eval(tr, te, a.seed);
    table.set(train.id, method, acc);
    if (!a.quiet) std::cerr << train.id << " zero-shot accuracy " << acc << "\n";
  }
  write_json(a.out / "report.json", to_json(evaluate_table(table)));
  write_text(a.out / "accuracy.csv", format_accuracy_csv(table));
  json run = run_header("zeroshot", a);
  run["seed"] = a.seed;
  run["forest_trees"] = kForestTrees;
  write_json(a.out / "run_config.json", run);
  return 0;
}

int run_explain(Args& a) {
  const ModelCheckpoint ck = load_checkpoint_arg(a.checkpoint);
  Dataset data;
  if (fs::is_regular_file(a.data)) {
    data = load_tsv_dataset(a.data, ends_with(a.data.filename().string(), kTestSuffix) ? Split::kTest : Split::kTrain);
  } else {
    data = load_single_pair(a.data).second;
  }
  if (a.sample_index >= data.size()) {
    throw Error("--sample-index " + std::to_string(a.sample_index) + " out of range: " + data.id + " has " +
                std::to_string(data.size()) + " samples");
  }
  prepare_out(a.out);
  const ModelState state = restore_model(ck);
  const ExplainRecord rec = explain_sample(state.query, data, a.sample_index);
  write_json(a.out / "explain.json", to_json(rec));
  write_text(a.out / "heatmap.csv", format_heatmap_csv(attention_heatmap(rec, state.query.config().series_length)));
  json run = run_header("explain", a);
  run["sample_index"] = a.sample_index;
  write_json(a.out / "run_config.json", run);
  return 0;
}

int run_evalstats(Args& a) {
  const AccuracyTable table = read_accuracy_csv(a.data);
  prepare_out(a.out);
  write_json(a.out / "report.json", to_json(evaluate_table(table)));
  write_text(a.out / "accuracy.csv", format_accuracy_csv(table));
  write_json(a.out / "run_config.json", run_header("evalstats", a));
  return 0;
}

int run_synth(Args& a) {
  if (a.motif_last < a.motif_first || a.motif_last >= kSeriesLength) {
    throw UsageError("motif interval must satisfy first <= last < " + std::to_string(kSeriesLength));
  }
  const MotifInterval motif{a.motif_first, a.motif_last};
  prepare_out(a.out);
  Dataset train = generate_motif_dataset(a.n_per_class, motif, a.noise, a.seed, Split::kTrain);
  Dataset test = generate_motif_dataset(a.n_test_per_class, motif, a.noise, a.seed + 1, Split::kTest);
  write_tsv_dataset(train, a.out / (a.name + kTrainSuffix));
  write_tsv_dataset(test, a.out / (a.name + kTestSuffix));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Shape-token time-series classification: pretraining, fine-tuning and evaluation"};
  app.require_subcommand(1);
  Args a;
  app.add_flag("-q,--quiet", a.quiet, "Suppress progress output");

  auto* pre = app.add_subcommand("pretrain", "Pretrain on every *_TRAIN.tsv under --data");
  pre->add_option("--data", a.data, "Directory of UCR-style TSV train splits")->required();
  pre->add_option("--out", a.out, "Checkpoint output directory")->required();
  add_train_flags(pre, a.pre);
  pre->add_option("--label-ratio", a.pre.label_ratio, "Fraction of labels kept per class")
      ->check(CLI::Range(0.0, 1.0))
      ->capture_default_str();
  pre->add_option("--scales", a.scales, "Window lengths (W or W:K), coarse to fine")->capture_default_str();
  pre->add_option("--dim", a.model.dim, "Model width")->check(CLI::PositiveNumber)->capture_default_str();
  pre->add_option("--depth", a.model.depth, "Encoder blocks")->check(CLI::PositiveNumber)->capture_default_str();
  pre->add_option("--heads", a.model.heads, "Attention heads")->check(CLI::PositiveNumber)->capture_default_str();
  pre->add_option("--ff-dim", a.model.ff_dim, "Feed-forward width")->check(CLI::PositiveNumber)->capture_default_str();
  pre->add_option("--proj-dim", a.model.proj_dim, "Projector output width")->check(CLI::PositiveNumber)->capture_default_str();
  pre->add_option("--dropout", a.model.dropout, "Dropout rate")->check(CLI::Range(0.0, 1.0))->capture_default_str();

  auto* fine = app.add_subcommand("finetune", "Fine-tune a checkpoint on one labeled dataset");
  fine->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  fine->add_option("--data", a.data, "Train/test pair (directory or *_TRAIN.tsv)")->required();
  fine->add_option("--out", a.out, "Output directory")->required();
  add_train_flags(fine, a.fine);
  fine->add_option("--mu", a.fine.mu, "Shape-loss weight")->check(CLI::NonNegativeNumber)->capture_default_str();

  auto* zs = app.add_subcommand("zeroshot", "Random forest on frozen class-token features");
  zs->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  zs->add_option("--data", a.data, "Directory of train/test pairs")->required();
  zs->add_option("--out", a.out, "Output directory")->required();
  zs->add_option("--seed", a.seed, "Forest seed")->capture_default_str();

  auto* ex = app.add_subcommand("explain", "Export per-scale attention scores for one sample");
  ex->add_option("--checkpoint", a.checkpoint, "Checkpoint directory")->required();
  ex->add_option("--data", a.data, "TSV file, or directory with one pair (test split used)")->required();
  ex->add_option("--out", a.out, "Output directory")->required();
  ex->add_option("--sample-index", a.sample_index, "Row of the dataset to explain")->capture_default_str();

  auto* ev = app.add_subcommand("evalstats", "Average accuracy, ranks and Wilcoxon tests from a CSV");
  ev->add_option("--data", a.data, "CSV with header dataset,method,accuracy")->required();
  ev->add_option("--out", a.out, "Output directory")->required();

  auto* syn = app.add_subcommand("synth", "Write a two-class synthetic motif dataset");
  syn->add_option("--out", a.out, "Output directory")->required();
  syn->add_option("--name", a.name, "Dataset name")->capture_default_str();
  syn->add_option("--n-per-class", a.n_per_class, "Train samples per class")->check(CLI::PositiveNumber)->capture_default_str();
  syn->add_option("--n-test-per-class", a.n_test_per_class, "Test samples per class")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  syn->add_option("--motif-first", a.motif_first, "First motif index")->capture_default_str();
  syn->add_option("--motif-last", a.motif_last, "Last motif index (inclusive)")->capture_default_str();
  syn->add_option("--noise", a.noise, "Gaussian noise std")->check(CLI::NonNegativeNumber)->capture_default_str();
  syn->add_option("--seed", a.seed, "Random seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*pre) return run_pretrain(a);
    if (*fine) return run_finetune(a);
    if (*zs) return run_zeroshot(a);
    if (*ex) return run_explain(a);
    if (*ev) return run_evalstats(a);
    if (*syn) return run_synth(a);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
