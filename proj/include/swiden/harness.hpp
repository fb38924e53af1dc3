#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "swiden/data.hpp"
#include "swiden/models.hpp"
#include "swiden/optim.hpp"

namespace swiden {

/// Subtracted from every pixel before it reaches a network.
inline constexpr double kInputMean = 0.5;

/// Everything a run needs. Loaded from flat key=value files ("#" starts a
/// comment); command-line flags override file values.
struct RunConfig {
  Architecture arch = Architecture::Baseline;
  std::size_t k = 4;
  double lambda = 0.1;  // 2.0 diverges when training from scratch
  SelectorMode selector = SelectorMode::Predicted;
  std::optional<std::filesystem::path> switch_checkpoint;
  /// SwiDeN branch count; 0 means one branch per dataset style.
  std::size_t branches = 0;
  double art_lr_scale = 4.0;
  bool attach_domain_head = true;

  SgdConfig sgd{5e-3, 0.9};
  /// Unset means: plateau schedule for every architecture except GRN.
  std::optional<bool> scheduler;
  PlateauConfig plateau;

  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::uint64_t seed = 42;

  std::optional<std::filesystem::path> data;
  std::filesystem::path out = "out";
  std::size_t split = 0;
  std::size_t num_splits = 5;
  std::optional<std::uint64_t> split_seed;  // defaults to `seed`
  std::size_t train_per_style = 30;
  std::size_t test_per_style = 10;

  std::size_t resize = 72;  // smallest image side before cropping
  std::size_t crop = 64;
  AugmentFlags augment;
  MiniVggSpec backbone;
  SwitchNetSpec switch_spec;

  // gen-data and in-memory experiment data
  std::size_t classes = 10;
  std::size_t per_class = 50;
  double rotation_deg = 10.0;

  // experiment suites
  std::string suite = "table1";
  std::size_t switch_epochs = 10;
  std::size_t jobs = 1;

  bool scheduler_enabled() const { return scheduler.value_or(arch != Architecture::Grn); }
  std::uint64_t effective_split_seed() const { return split_seed.value_or(seed); }
  SplitSpec split_spec() const { return {train_per_style, test_per_style, effective_split_seed()}; }
  /// Throws ConfigError for inconsistent values.
  void validate() const;
};

using ConfigMap = std::map<std::string, std::string>;

/// Parses key=value lines. Throws ConfigError on a malformed line.
ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);
/// Applies recognised keys; throws ConfigError on unknown keys or bad values.
void apply_config(RunConfig& cfg, const ConfigMap& values);
/// The fully resolved configuration as key=value text (re-readable).
std::string format_config(const RunConfig& cfg);

struct Prediction {
  std::size_t image;
  std::size_t target;  // class (style for the Switch)
  std::size_t style;
  std::size_t predicted;
};

struct Metrics {
  std::string arch;
  std::size_t correct = 0, total = 0;
  double overall_acc = 0.0;
  std::vector<std::size_t> style_correct, style_total;
  std::vector<double> per_style_acc;
  std::vector<std::string> target_names;
  std::vector<double> per_class_acc;
  std::vector<double> loss_curve, lr_curve, val_curve;
  double best_val_acc = 0.0;
  std::size_t best_epoch = 0;
  std::vector<Prediction> predictions;

  std::optional<double> style_acc(std::size_t style) const;
};

/// Accuracy breakdown from a prediction log; overall is correct / total.
Metrics compute_metrics(const std::vector<Prediction>& preds, std::vector<std::string> target_names,
                        std::size_t num_styles);

/// Writes key=value metrics. With `with_timestamp` the first data line is
/// "timestamp=..."; compare_metrics_files ignores that line.
void write_metrics(const std::filesystem::path& path, const Metrics& m, bool with_timestamp = true);
void write_predictions_csv(const std::filesystem::path& path, const Metrics& m);
/// True when both files match line by line, ignoring "timestamp=" lines.
bool compare_metrics_files(const std::filesystem::path& a, const std::filesystem::path& b);

SyntheticConfig synthetic_config(const RunConfig& cfg);

/// Dataset from cfg.data (packed file or directory), or a synthetic dataset
/// generated from cfg when no path is given; images are rescaled so their
/// smallest side equals cfg.resize.
Dataset load_dataset(const RunConfig& cfg);

/// Builds the network named by cfg.arch for a dataset with the given label space.
Network build_network(const RunConfig& cfg, std::size_t num_classes, std::size_t num_styles);

/// Five-crop pooled predictions (geometric crops) for the given images.
std::vector<Prediction> evaluate_five_crop(Network& net, const Dataset& ds, std::span<const std::size_t> indices,
                                           std::size_t crop, std::size_t batch_images = 8);

/// Single geometric centre crop per image; used for the per-epoch validation.
std::vector<Prediction> evaluate_center_crop(Network& net, const Dataset& ds, std::span<const std::size_t> indices,
                                             std::size_t crop, std::size_t batch = 32);

struct EpochLog {
  std::size_t epoch;
  double loss;
  double lr;
  double val_acc;
};

struct TrainResult {
  Network net;
  Metrics metrics;  // test-set metrics plus training curves
};

/// Seeds: parameters from derive_seed(seed, 0), batch order / crops /
/// augmentation from derive_seed(seed, 1), dropout from derive_seed(seed, 2).
/// Each epoch draws one of the five training crops per image and validates
/// on centre crops; the best-validation parameters are restored before the
/// five-crop test evaluation.
TrainResult train_and_evaluate(const RunConfig& cfg, const Dataset& ds, const Split& split,
                               const std::function<void(const EpochLog&)>& on_epoch = {});

/// Output of one harness command.
struct RunArtifacts {
  Metrics metrics;
  std::filesystem::path checkpoint, metrics_file, predictions_file, config_file;
};

/// train / train-switch: writes checkpoint.swck, metrics.txt, predictions.csv
/// and run.cfg under cfg.out.
RunArtifacts cmd_train(const RunConfig& cfg, const std::function<void(const EpochLog&)>& on_epoch = {});
RunArtifacts cmd_train_switch(RunConfig cfg, const std::function<void(const EpochLog&)>& on_epoch = {});
/// Evaluates `checkpoint` on split cfg.split of the dataset; writes
/// eval_metrics.txt, eval_predictions.csv and eval_report.txt under cfg.out.
/// Never modifies the checkpoint or the dataset.
RunArtifacts cmd_eval(const RunConfig& cfg, const std::filesystem::path& checkpoint);
/// Generates the synthetic dataset and writes it in packed format.
Dataset cmd_gen_data(const RunConfig& cfg, const std::filesystem::path& out_file);

struct TableRow {
  std::string label;
  double overall, art, photo;
};

/// Plain-text table with the columns Arch. | Overall Acc. | Art Acc. | Photo Acc.
std::string format_accuracy_table(const std::vector<TableRow>& rows);

struct ExperimentResult {
  std::string suite;
  std::vector<std::string> row_labels;
  std::vector<std::vector<Metrics>> runs;  // [row][split]
  std::vector<Metrics> switch_runs;        // [split]
  std::vector<TableRow> mean_rows;
  std::string report;
  double seconds = 0.0;
};

/// Runs a suite over cfg.num_splits splits: "table1" trains baseline, GRN and
/// SwiDeN (C<k>-S), "table3" trains C1-S..C5-S. Writes report.txt and one
/// metrics file per run under cfg.out.
ExperimentResult cmd_experiment(const RunConfig& cfg, const std::function<void(const std::string&)>& log = {});

}  // namespace swiden
