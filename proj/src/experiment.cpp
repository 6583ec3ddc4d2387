#include "tdvcl/experiment.hpp"

#include "tdvcl/errors.hpp"
#include "tdvcl/trainer.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace tdvcl {

namespace fs = std::filesystem;

namespace {

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write '" + path.string() + "'");
  return out;
}

std::string run_name(const ExperimentConfig& config, std::uint64_t seed) {
  return std::string(to_string(config.method.kind)) + "-seed" + std::to_string(seed);
}

ExperimentResult run_oracle(const ExperimentConfig& config, const fs::path& out, std::ostream* progress) {
  ExperimentResult result;
  const RecursionMode mode = config.method.kind == ObjectiveKind::VCL ? RecursionMode::single_step()
                                                                      : RecursionMode::n_step(config.method.n);
  std::vector<double> finals;
  for (std::uint64_t seed : config.seeds) {
    SeededRng rng(seed);
    ConjugateStreamOptions opt;
    opt.dim = config.oracle.dim;
    opt.tasks = static_cast<std::size_t>(config.tasks);
    opt.rows_per_task = config.oracle.rows_per_task;
    opt.prior_variance = config.oracle.prior_variance;
    opt.noise_var = config.oracle.noise_var;
    SeededRng stream_rng = rng.split();
    SeededRng noise_rng = rng.split();
    const ConjugateStream stream = make_conjugate_stream(opt, stream_rng);
    const auto truth = exact_trajectory(stream);
    const auto approx = perturbed_recursion(stream, config.oracle.noise_scale, mode, noise_rng);
    for (std::size_t t = 0; t < truth.size(); ++t) {
      result.kl_rows.push_back({run_name(config, seed), seed, mode.name(), static_cast<int>(t + 1),
                                kl_to_truth(approx[t], truth[t])});
    }
    finals.push_back(result.kl_rows.back().kl);
    if (progress) *progress << "seed " << seed << ": final KL-to-truth " << finals.back() << '\n';
  }
  const fs::path csv = out / "kl_to_truth.csv";
  auto f = open_out(csv);
  write_kl_csv(f, result.kl_rows);
  result.files.push_back(csv.string());

  std::sort(finals.begin(), finals.end());
  const std::size_t m = finals.size() / 2;
  const double median = finals.size() % 2 ? finals[m] : 0.5 * (finals[m - 1] + finals[m]);
  std::ostringstream s;
  s << mode.name() << "  median final KL-to-truth " << median << " over " << finals.size() << " seeds\n";
  result.summary = s.str();
  return result;
}

TaskDataset head_rows(const TaskDataset& data, std::size_t count) {
  if (count == 0 || count >= data.size()) return data;
  std::vector<std::size_t> idx(count);
  for (std::size_t i = 0; i < count; ++i) idx[i] = i;
  return data.subset(idx);
}

}  // namespace

std::shared_ptr<const BaseData> load_base_data(const ExperimentConfig& config) {
  const fs::path dir(config.data.dir);
  auto base = std::make_shared<BaseData>();
  base->train = load_idx((dir / config.data.train_images).string(), (dir / config.data.train_labels).string());
  base->test = load_idx((dir / config.data.test_images).string(), (dir / config.data.test_labels).string());
  return base;
}

TaskStream build_stream(const ExperimentConfig& config, std::uint64_t seed, const BaseData* base) {
  SeededRng rng(mix_seed(seed ^ 0x5eedda7aULL));
  switch (config.benchmark) {
    case Benchmark::Synthetic: {
      SyntheticOptions opt = config.synthetic;
      opt.task_count = config.tasks;
      return make_synthetic_stream(opt, rng);
    }
    case Benchmark::Permuted:
    case Benchmark::Split: {
      if (!base) throw ContractError("build_stream: base data required for " + std::string(to_string(config.benchmark)));
      const TaskDataset train = config.data.train_examples > 0
                                    ? sample_subset(base->train, std::min(config.data.train_examples, base->train.size()), rng)
                                    : base->train;
      // The test set is fixed across seeds so accuracy differences come from training.
      const TaskDataset test = head_rows(base->test, config.data.test_examples);
      if (config.benchmark == Benchmark::Permuted) return make_permuted_stream(train, test, config.tasks, rng);
      return make_split_stream(train, test, config.split_pairs, config.head);
    }
    case Benchmark::Oracle:
      break;
  }
  throw ContractError("build_stream: the oracle benchmark has no task stream");
}

ExperimentResult run_experiment(const ExperimentConfig& config, const std::string& out_dir, std::ostream* progress,
                                const BaseData* base) {
  config.validate();
  const fs::path out(out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec || !fs::is_directory(out)) throw IoError("cannot create output directory '" + out_dir + "'");
  {
    auto f = open_out(out / "config.json");
    f << to_json(config).dump(2) << '\n';
  }
  if (config.benchmark == Benchmark::Oracle) {
    ExperimentResult r = run_oracle(config, out, progress);
    r.files.insert(r.files.begin(), (out / "config.json").string());
    return r;
  }

  std::shared_ptr<const BaseData> owned;
  if (!base && config.benchmark != Benchmark::Synthetic) {
    owned = load_base_data(config);
    base = owned.get();
  }

  ExperimentResult result;
  result.files.push_back((out / "config.json").string());
  for (std::uint64_t seed : config.seeds) {
    const TaskStream stream = build_stream(config, seed, base);
    TrainConfig train = config.train;
    train.seed = seed;
    RunOptions opt;
    opt.hidden = config.hidden;
    opt.prior_variance = config.prior_variance;
    opt.replay_tasks = config.replay_tasks;
    opt.replay_per_task = config.replay_per_task;
    opt.coreset_per_task = config.coreset_per_task;
    opt.run_id = run_name(config, seed);
    const fs::path log_path = out / (opt.run_id + ".jsonl");
    auto log = open_out(log_path);
    opt.log_sink = &log;
    RunResult run = run_continual(stream, config.method, train, opt);
    result.files.push_back(log_path.string());
    if (progress) {
      const int last = run.accuracy.steps();
      *progress << opt.run_id << ": average accuracy after task " << last << " = "
                << avg_accuracy(run.accuracy, last) << '\n';
    }
    result.matrices.push_back(std::move(run.accuracy));
  }
  const ReportFiles files = emit_report(result.matrices, out.string());
  result.files.push_back(files.csv);
  result.files.push_back(files.json);
  result.files.insert(result.files.end(), files.svg.begin(), files.svg.end());

  const auto rows = aggregate(result.matrices);
  std::vector<AggregateRow> last;
  for (const auto& r : rows) {
    if (r.t == config.tasks) last.push_back(r);
  }
  result.summary = format_aggregate_table(last);
  return result;
}

}  // namespace tdvcl
