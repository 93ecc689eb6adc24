#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "fopng/datasets.hpp"
#include "fopng/fisher.hpp"
#include "fopng/gradient_memory.hpp"
#include "fopng/model.hpp"
#include "fopng/update_rules.hpp"

namespace fopng {

struct StreamConfig {
  StreamKind kind = StreamKind::Synthetic;
  int n_tasks = 5;                                      // permuted
  std::vector<double> angles_deg = {0, 10, 20, 30, 40}; // rotated
  int classes_per_task = 2;                             // split
  SyntheticConfig synthetic;
  Index train_cap = 0;  // per-task cap on train samples; 0 = full
  double validation_fraction = 0.1;
  std::string data_dir;  // MNIST IDX root; falls back to $FOPNG_DATA_DIR
};

struct RunConfig {
  StreamConfig stream;
  std::vector<int> layer_sizes = {784, 100, 100, 10};
  OptimizerConfig opt;
  int epochs_per_task = 5;
  Index batch_size = 10;
  int grads_per_task = 80;
  Index max_directions = 400;
  std::optional<Index> fisher_batch_size;  // nullopt = full
  FisherMode fisher_mode = FisherMode::Sampled;
  StoredGradKind stored_grad = StoredGradKind::GroundTruthLogit;
  std::string first_task_optimizer = "sgd";  // "sgd" or "adam"
  double first_task_lr = 0.0;                // 0 = use opt.eta
  std::vector<std::uint64_t> seeds = {1, 2, 3};
  std::string out_dir = "out";

  void validate() const;
};

/// Lower-triangular accuracies: rows[k-1][i-1] = a_{i,k}, the accuracy on
/// task i after training through task k (1-based i <= k).
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;

  int num_tasks() const { return static_cast<int>(rows.size()); }
  double at(int task_eval, int task_trained) const;
  bool operator==(const AccuracyMatrix&) const = default;
};

/// A_k: arithmetic mean of column k, i.e. of a_{1..k,k}.
double average_accuracy(const AccuracyMatrix& a, int k);

struct ExperimentResult {
  std::uint64_t seed = 0;
  AccuracyMatrix test;
  AccuracyMatrix validation;  // empty when validation_fraction == 0
  long degenerate_steps = 0;
  long dropped_directions = 0;
};

/// Builds the task stream for one seed (transforms, caps, validation split
/// all derived from the seed).
TaskStream build_stream(const RunConfig& cfg, std::uint64_t seed,
                        std::vector<Dataset>* validation_out = nullptr);

/// Full continual-learning run for one seed: task 1 trained with the plain
/// first-task optimizer, the configured rule from task 2 on, per-epoch Fisher
/// recompute, gradient storage at task boundaries, EMA Fisher update.
ExperimentResult run_experiment(const RunConfig& cfg, std::uint64_t seed);

/// Runs every seed in cfg.seeds (in parallel, independent jobs) and returns
/// results in seed order.
std::vector<ExperimentResult> run_all_seeds(const RunConfig& cfg);

double evaluate_accuracy(const Mlp& model, const VecX& theta,
                         const Dataset& ds);

/// Writes results.csv, summary.csv (mean and 68%/95% normal CIs across
/// seeds) and config.json into out_dir. Byte-identical for identical inputs.
void emit_results(const std::vector<ExperimentResult>& results,
                  const RunConfig& cfg, const std::filesystem::path& out_dir);

/// Emits a gnuplot script plotting mean A_k per task from summary.csv.
void write_plot_script(const std::filesystem::path& summary_csv,
                       const std::filesystem::path& script_path);

/// Recomputes summary.csv from an existing results.csv.
void summarize_results_csv(const std::filesystem::path& results_csv,
                           const std::filesystem::path& summary_csv);

struct SweepPoint {
  double eta = 0.0;
  double lambda = 0.0;
  double mean_final_val_accuracy = 0.0;
  double mean_task1_accuracy = 0.0;
  bool passed_filter = false;  // task-1 accuracy >= 0.9
};

/// Grid sweep over eta x lambda with the validation-accuracy selection rule;
/// points whose first-task accuracy falls below 90% are filtered out of
/// selection. Returns all points; best() picks the winner.
std::vector<SweepPoint> run_sweep(const RunConfig& base,
                                  const std::vector<double>& etas,
                                  const std::vector<double>& lambdas);
const SweepPoint* best_sweep_point(const std::vector<SweepPoint>& points);

RunConfig config_from_json_file(const std::filesystem::path& path);
RunConfig config_from_json_text(const std::string& text);
std::string config_to_json_text(const RunConfig& cfg);
void apply_override(RunConfig& cfg, const std::string& key_eq_value);

/// Loads the four standard MNIST IDX files from dir (train + test pair).
std::pair<Dataset, Dataset> load_mnist(const std::filesystem::path& dir);

/// Resolves the dataset directory: explicit config value, else FOPNG_DATA_DIR.
std::string resolve_data_dir(const StreamConfig& stream);

}  // namespace fopng
