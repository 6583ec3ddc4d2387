#pragma once

#include "tdvcl/evalreport.hpp"
#include "tdvcl/objectives.hpp"
#include "tdvcl/tasks.hpp"
#include "tdvcl/vardist.hpp"

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace tdvcl {

struct TrainConfig {
  std::size_t batch_size = 256;
  int max_epochs = 100;
  double learning_rate = 1e-3;
  /// Epochs without validation improvement before stopping.
  int patience = 5;
  int train_mc_samples = 5;
  double validation_fraction = 0.1;
  std::uint64_t seed = 0;
  /// Rows drawn per replayed lag; 0 uses batch_size.
  std::size_t replay_batch_size = 0;
  /// Predictive draws at evaluation.
  int eval_mc_samples = 100;
  /// Fine-tuning epochs on the core set before each evaluation (VCLCoreSet only).
  int coreset_epochs = 20;

  void validate() const;
};

struct AdamState {
  static constexpr double beta1 = 0.9;
  static constexpr double beta2 = 0.999;
  static constexpr double epsilon = 1e-8;

  std::vector<double> m;
  std::vector<double> v;
  std::int64_t step = 0;
};

/// Bias-corrected Adam. An empty state is sized on first use; a state of
/// another length is a DimensionError; non-finite gradients are a NumericError.
void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr);

/// Tracks the best validation loss seen so far.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience);
  /// Records one epoch; true when it improved on the best loss.
  bool observe(int epoch, double validation_loss);
  bool should_stop() const noexcept { return since_best_ >= patience_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = std::numeric_limits<double>::infinity();
  int since_best_ = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double validation_loss = 0.0;
  bool improved = false;
  /// Objective diagnostics averaged over the epoch's mini-batches.
  std::map<std::string, double> diagnostics;
};

struct TaskLog {
  int task = 0;
  std::vector<EpochLog> epochs;
  int best_epoch = 0;
  double best_validation_loss = 0.0;
  std::int64_t optimizer_steps = 0;
  bool stopped_early = false;
};

/// Optimizes `q` on `train` (plus replayed lags) and restores the parameters
/// of the best validation epoch. The task being learned is history.current_task().
/// Writes one JSON object per epoch to `log_sink` when given.
TaskLog train_task(MeanFieldGaussian& q, const ObjectiveSpec& spec, const TaskDataset& train,
                   const ReplayBuffer& buffer, const PosteriorHistory& history, const GaussianPrior& prior,
                   const TrainConfig& config, SeededRng& rng, std::ostream* log_sink = nullptr);

struct RunOptions {
  std::vector<std::size_t> hidden = {100, 100};
  double prior_variance = 1e-5;
  std::size_t replay_tasks = 2;
  std::size_t replay_per_task = 200;
  /// Core-set size per task for VCLCoreSet; 0 uses replay_per_task.
  std::size_t coreset_per_task = 0;
  std::string run_id;
  std::ostream* log_sink = nullptr;
};

struct RunResult {
  AccuracyMatrix accuracy;
  std::vector<TaskLog> logs;
  /// Posterior at the end of each task, oldest first.
  std::vector<PosteriorSnapshot> snapshots;
};

/// Accuracy on each test set of the first `tasks` tasks of `stream`.
/// With a non-empty core set, a copy of q is fine-tuned on it first; q itself is untouched.
std::vector<double> evaluate_tasks(const MeanFieldGaussian& q, const ObjectiveSpec& spec, const TaskStream& stream,
                                   int tasks, const CoreSet* coreset, const GaussianPrior& prior,
                                   const TrainConfig& config, SeededRng& rng);

/// Learns the stream task by task, snapshotting the posterior and evaluating every
/// observed task after each one.
RunResult run_continual(const TaskStream& stream, ObjectiveSpec spec, const TrainConfig& config,
                        const RunOptions& options);

}  // namespace tdvcl
