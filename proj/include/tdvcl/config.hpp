#pragma once

#include "tdvcl/objectives.hpp"
#include "tdvcl/tasks.hpp"
#include "tdvcl/trainer.hpp"

#include "json.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace tdvcl {

enum class Benchmark { Permuted, Split, Synthetic, Oracle };

std::string_view to_string(Benchmark b);

/// IDX files of the base dataset. Relative `dir` is resolved against the
/// dataset root (see resolve_data_paths).
struct DataConfig {
  std::string dir;
  std::string train_images = "train-images-idx3-ubyte";
  std::string train_labels = "train-labels-idx1-ubyte";
  std::string test_images = "t10k-images-idx3-ubyte";
  std::string test_labels = "t10k-labels-idx1-ubyte";
  /// Training examples drawn per run (0 keeps all); permuted tasks share them.
  std::size_t train_examples = 0;
  /// Test examples kept (0 keeps all).
  std::size_t test_examples = 0;

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

struct OracleConfig {
  std::size_t dim = 4;
  std::size_t rows_per_task = 8;
  double prior_variance = 1.0;
  double noise_var = 0.25;
  double noise_scale = 0.1;

  friend bool operator==(const OracleConfig&, const OracleConfig&) = default;
};

struct ExperimentConfig {
  Benchmark benchmark = Benchmark::Synthetic;
  int tasks = 2;
  HeadMode head = HeadMode::Single;
  DataConfig data;
  std::vector<std::pair<int, int>> split_pairs;
  SyntheticOptions synthetic;
  OracleConfig oracle;
  ObjectiveSpec method;
  std::vector<std::size_t> hidden = {100, 100};
  double prior_variance = 1e-5;
  TrainConfig train;
  std::size_t replay_tasks = 2;
  std::size_t replay_per_task = 200;
  std::size_t coreset_per_task = 0;
  std::vector<std::uint64_t> seeds = {0};
  std::string output_dir = "runs/out";

  /// ConfigError naming the offending field.
  void validate() const;
};

/// Strict parse: unknown keys, wrong types and method fields missing for the
/// chosen method are ConfigErrors carrying the field path.
ExperimentConfig parse_config(const nlohmann::json& doc);
nlohmann::json to_json(const ExperimentConfig& config);

/// Reads and parses a file; IoError when unreadable, ConfigError on bad JSON.
ExperimentConfig load_config(const std::string& path);

/// Makes data.dir absolute: relative paths resolve against `data_root`
/// (typically $TDVCL_DATA_ROOT) or, when empty, `config_dir`. Every referenced
/// file must exist; otherwise ConfigError("data.<field>").
void resolve_data_paths(ExperimentConfig& config, const std::string& data_root, const std::string& config_dir);

}  // namespace tdvcl
