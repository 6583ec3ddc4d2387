#pragma once

#include "tdvcl/config.hpp"
#include "tdvcl/evalreport.hpp"
#include "tdvcl/oracle.hpp"
#include "tdvcl/tasks.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace tdvcl {

/// Base IDX data shared by every seed of a permuted or split experiment.
struct BaseData {
  TaskDataset train;
  TaskDataset test;
};

/// Loads the files named by config.data (paths must already be resolved).
std::shared_ptr<const BaseData> load_base_data(const ExperimentConfig& config);

/// Task stream for one seed. `base` is required for permuted and split.
TaskStream build_stream(const ExperimentConfig& config, std::uint64_t seed, const BaseData* base);

struct ExperimentResult {
  std::vector<AccuracyMatrix> matrices;  // classifier benchmarks
  std::vector<KlTrajectoryRow> kl_rows;  // oracle benchmark
  std::vector<std::string> files;
  /// Final-step summary printed by the CLI.
  std::string summary;
};

/// Runs every seed, writes config.json (the resolved config), per-seed JSON-lines
/// logs and the reports into `out_dir`. Progress lines go to `progress` when given.
ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir,
                                std::ostream* progress = nullptr, const BaseData* base = nullptr);

}  // namespace tdvcl
