#pragma once

#include "tdvcl/rng.hpp"
#include "tdvcl/tasks.hpp"
#include "tdvcl/tensor.hpp"
#include "tdvcl/vardist.hpp"

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace tdvcl {

/// Monte-Carlo predictive: rows are (1/S) Σ_s softmax(f(x; θ_s)), θ_s ~ q.
Tensor predictive(const MeanFieldGaussian& q, const Tensor& inputs, Head head, int samples,
                  SeededRng& rng);

/// Class probabilities of the network evaluated at the posterior mean.
Tensor predictive_at_mean(const MeanFieldGaussian& q, const Tensor& inputs, Head head);

/// Fraction of rows whose argmax matches the label. samples == 0 evaluates at the mean.
double accuracy(const MeanFieldGaussian& q, const TaskDataset& data, int samples, SeededRng& rng);

/// acc[t][k] for k <= t (both 1-based): accuracy on task k after training task t.
class AccuracyMatrix {
 public:
  AccuracyMatrix() = default;
  AccuracyMatrix(std::string run_id, std::uint64_t seed, std::string method);

  const std::string& run_id() const noexcept { return run_id_; }
  std::uint64_t seed() const noexcept { return seed_; }
  const std::string& method() const noexcept { return method_; }

  /// Sets acc[t][k]; rows grow as needed. ContractError unless 1 <= k <= t and value in [0, 1].
  void record(int t, int k, double value);
  /// ContractError when the entry was never recorded.
  double at(int t, int k) const;
  bool has(int t, int k) const;
  /// Number of training steps with at least one entry.
  int steps() const noexcept { return static_cast<int>(rows_.size()); }
  bool row_complete(int t) const;

  friend bool operator==(const AccuracyMatrix&, const AccuracyMatrix&) = default;

 private:
  std::string run_id_;
  std::uint64_t seed_ = 0;
  std::string method_;
  std::vector<std::vector<double>> rows_;  // NaN marks a missing entry
};

/// Mean of acc[t][1..t]; ContractError when row t is incomplete.
double avg_accuracy(const AccuracyMatrix& matrix, int t);

struct AggregateRow {
  std::string method;
  int t = 0;
  int runs = 0;
  double mean = 0.0;
  /// Two sample standard deviations across runs (0 for a single run).
  double two_sigma = 0.0;
};

/// Average accuracy at each t, aggregated over every run of each method.
std::vector<AggregateRow> aggregate(std::span<const AccuracyMatrix> matrices);

/// CSV columns: run_id,seed,method,t,task,accuracy (accuracy with 17 significant digits).
void write_accuracy_csv(std::ostream& out, std::span<const AccuracyMatrix> matrices);
std::vector<AccuracyMatrix> read_accuracy_csv(std::istream& in);

struct ReportFiles {
  std::string csv;
  std::string json;
  std::vector<std::string> svg;
};

/// Writes accuracy.csv, aggregate.json and (optionally) average_accuracy.svg plus
/// task_accuracy.svg into `out_dir`, creating it when missing.
ReportFiles emit_report(std::span<const AccuracyMatrix> matrices, const std::string& out_dir,
                        bool write_svg = true);

/// One line per method at the final step: "method  mean ± 2σ".
std::string format_aggregate_table(std::span<const AggregateRow> rows);

}  // namespace tdvcl
