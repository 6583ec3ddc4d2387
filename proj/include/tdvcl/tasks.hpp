#pragma once

#include "tdvcl/network.hpp"
#include "tdvcl/objectives.hpp"
#include "tdvcl/rng.hpp"
#include "tdvcl/tensor.hpp"

#include <cstddef>
#include <deque>
#include <string>
#include <utility>
#include <vector>

namespace tdvcl {

/// Inputs are N x D in [0, 1]; labels index the task's head.
struct TaskDataset {
  Tensor inputs;
  std::vector<int> labels;
  int task_id = 0;
  int class_count = 0;
  Head head;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t input_dim() const noexcept { return inputs.cols(); }
  /// ContractError when labels/rows disagree, a label is out of range or an input is not finite.
  void validate() const;
  /// Rows in `indices` order; ContractError on an empty selection or bad index.
  TaskDataset subset(std::span<const std::size_t> indices) const;
  /// Whole dataset as an objective batch.
  LabeledBatch batch() const;
};

struct TaskPair {
  TaskDataset train;
  TaskDataset test;
};

enum class Protocol { Permuted, Split, Synthetic };
enum class HeadMode { Single, Multi };

struct TaskStream {
  Protocol protocol = Protocol::Synthetic;
  std::vector<TaskPair> tasks;
  /// Width of the network output layer.
  std::size_t output_dim = 0;

  std::size_t size() const noexcept { return tasks.size(); }
  std::size_t input_dim() const;
};

/// Reads an IDX image/label file pair (magics 0x803 / 0x801, big-endian).
/// `limit` > 0 keeps only the first `limit` examples.
TaskDataset load_idx(const std::string& images_path, const std::string& labels_path,
                     std::size_t limit = 0);

/// Uniform random subset of `count` rows (all rows when count >= size), original order kept.
TaskDataset sample_subset(const TaskDataset& data, std::size_t count, SeededRng& rng);

/// Task 1 keeps pixel order; later tasks apply one random permutation to both splits.
TaskStream make_permuted_stream(const TaskDataset& base_train, const TaskDataset& base_test,
                                int task_count, SeededRng& rng);

/// One binary task per class pair, relabelled {0, 1}. Multi-head mode routes
/// task i to output columns [2i, 2i + 2).
TaskStream make_split_stream(const TaskDataset& base_train, const TaskDataset& base_test,
                             const std::vector<std::pair<int, int>>& pairs,
                             HeadMode mode = HeadMode::Single);

struct SyntheticOptions {
  int task_count = 2;
  std::size_t input_dim = 8;
  std::size_t train_per_task = 200;
  std::size_t test_per_task = 200;
  /// Distance of each class mean from the separating hyperplane.
  double margin = 1.5;
};

/// Two-class Gaussian clusters separated along a random direction per task,
/// squashed into [0, 1] with a logistic map.
TaskStream make_synthetic_stream(const SyntheticOptions& options, SeededRng& rng);

/// Bounded memory of the most recent finished tasks.
class ReplayBuffer {
 public:
  ReplayBuffer(std::size_t max_tasks, std::size_t per_task);

  /// Stores a uniform B-subset of `finished`; evicts the oldest beyond T.
  /// ContractError unless finished.task_id exceeds every stored id.
  void update(const TaskDataset& finished, SeededRng& rng);

  /// `batch_size` rows drawn with replacement from task current_task - lag,
  /// or an empty batch when that task is not stored.
  LabeledBatch batch(int current_task, int lag, std::size_t batch_size, SeededRng& rng) const;

  std::size_t max_tasks() const noexcept { return max_tasks_; }
  std::size_t per_task() const noexcept { return per_task_; }
  std::size_t total_examples() const noexcept;
  std::vector<int> stored_tasks() const;
  const TaskDataset* find(int task_id) const;

 private:
  std::size_t max_tasks_;
  std::size_t per_task_;
  std::deque<TaskDataset> stored_;  // oldest first
};

/// Examples reserved per task before training, replayed only by the
/// fine-tuning step that precedes evaluation.
class CoreSet {
 public:
  explicit CoreSet(std::size_t per_task);

  /// Moves a random subset of `train` into the core set and returns the rest.
  /// At least one training example is always left behind.
  TaskDataset reserve(const TaskDataset& train, SeededRng& rng);

  std::size_t per_task() const noexcept { return per_task_; }
  const std::vector<TaskDataset>& tasks() const noexcept { return stored_; }
  std::size_t total_examples() const noexcept;

 private:
  std::size_t per_task_;
  std::vector<TaskDataset> stored_;
};

}  // namespace tdvcl
