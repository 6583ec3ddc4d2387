#include "tdvcl/trainer.hpp"

#include "tdvcl/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

namespace tdvcl {

void TrainConfig::validate() const {
  if (batch_size == 0) throw ConfigError("train.batch_size", "must be positive");
  if (max_epochs < 1) throw ConfigError("train.max_epochs", "must be positive");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be positive");
  if (patience < 1) throw ConfigError("train.patience", "must be positive");
  if (train_mc_samples < 1) throw ConfigError("train.train_mc_samples", "must be positive");
  if (!(validation_fraction > 0.0 && validation_fraction <= 0.5)) {
    throw ConfigError("train.validation_fraction", "must be in (0, 0.5]");
  }
  if (eval_mc_samples < 1) throw ConfigError("train.eval_mc_samples", "must be positive");
  if (coreset_epochs < 0) throw ConfigError("train.coreset_epochs", "must be non-negative");
}

void adam_step(std::span<double> params, std::span<const double> grads, AdamState& state, double lr) {
  if (grads.size() != params.size()) {
    throw DimensionError("adam: " + std::to_string(grads.size()) + " gradients for " +
                         std::to_string(params.size()) + " parameters");
  }
  if (state.m.empty() && state.v.empty() && state.step == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw DimensionError("adam: optimizer state does not match parameter length");
  }
  for (double g : grads) {
    if (!std::isfinite(g)) throw NumericError("adam: non-finite gradient");
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(AdamState::beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(AdamState::beta2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    state.m[k] = AdamState::beta1 * state.m[k] + (1.0 - AdamState::beta1) * grads[k];
    state.v[k] = AdamState::beta2 * state.v[k] + (1.0 - AdamState::beta2) * grads[k] * grads[k];
    const double m_hat = state.m[k] / c1;
    const double v_hat = state.v[k] / c2;
    params[k] -= lr * m_hat / (std::sqrt(v_hat) + AdamState::epsilon);
  }
}

EarlyStopping::EarlyStopping(int patience) : patience_(patience) {
  if (patience < 1) throw ContractError("early stopping: patience must be >= 1");
}

bool EarlyStopping::observe(int epoch, double validation_loss) {
  if (validation_loss < best_loss_) {
    best_loss_ = validation_loss;
    best_epoch_ = epoch;
    since_best_ = 0;
    return true;
  }
  ++since_best_;
  return false;
}

namespace {

// Lags reached by the objective while learning task t.
int lag_count(const ObjectiveSpec& spec, const ReplayBuffer& buffer, int t) {
  if (spec.kind == ObjectiveKind::BatchMLE) return std::min<int>(t, static_cast<int>(buffer.max_tasks()) + 1);
  return coefficients_for(spec, t).effective_n;
}

std::vector<LabeledBatch> lag_batches(LabeledBatch current, const ReplayBuffer& buffer, int t, int lags,
                                      std::size_t replay_size, SeededRng& rng) {
  std::vector<LabeledBatch> out;
  out.push_back(std::move(current));
  for (int i = 1; i < lags; ++i) out.push_back(buffer.batch(t, i, replay_size, rng));
  return out;
}

struct StepResult {
  double loss;
  std::map<std::string, double> diagnostics;
};

StepResult optimizer_step(MeanFieldGaussian& q, const ObjectiveSpec& spec, std::span<const LabeledBatch> batches,
                          const PosteriorHistory& history, const GaussianPrior& prior, AdamState& mu_state,
                          AdamState& rho_state, double lr, SeededRng& rng) {
  Tape tape;
  const auto live = LivePosterior::record(tape, q);
  auto terms = evaluate_objective(spec, live, history, prior, batches, rng);
  if (!std::isfinite(terms.diagnostics.loss)) throw NumericError("training: non-finite loss");
  tape.backward(terms.loss);
  adam_step(q.mu(), live.mu.grad().data(), mu_state, lr);
  if (spec.is_variational()) adam_step(q.rho(), live.rho.grad().data(), rho_state, lr);
  return {terms.diagnostics.loss, terms.diagnostics.named()};
}

std::vector<std::size_t> shuffled(std::size_t n, SeededRng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(std::span<std::size_t>(idx));
  return idx;
}

}  // namespace

TaskLog train_task(MeanFieldGaussian& q, const ObjectiveSpec& spec_in, const TaskDataset& train,
                   const ReplayBuffer& buffer, const PosteriorHistory& history, const GaussianPrior& prior,
                   const TrainConfig& config, SeededRng& rng, std::ostream* log_sink) {
  config.validate();
  ObjectiveSpec spec = spec_in;
  spec.train_mc_samples = config.train_mc_samples;
  spec.validate();
  train.validate();

  const int t = history.current_task();
  const int lags = lag_count(spec, buffer, t);
  const std::size_t replay_size = config.replay_batch_size > 0 ? config.replay_batch_size : config.batch_size;

  // Seeded hold-out split; tiny tasks validate on their training data.
  const std::size_t n = train.size();
  std::size_t n_val = 0;
  if (n >= 2) {
    n_val = static_cast<std::size_t>(std::lround(config.validation_fraction * static_cast<double>(n)));
    n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
  }
  std::vector<std::size_t> order = shuffled(n, rng);
  std::vector<std::size_t> val_idx(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> fit_idx(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  std::sort(val_idx.begin(), val_idx.end());
  std::sort(fit_idx.begin(), fit_idx.end());
  const TaskDataset fit = train.subset(fit_idx);
  const TaskDataset validation = n_val > 0 ? train.subset(val_idx) : train;

  // Fixed replay rows and noise make the validation loss a function of q alone.
  SeededRng val_rng = rng.split();
  const auto val_batches = lag_batches(validation.batch(), buffer, t, lags, replay_size, val_rng);
  const std::uint64_t val_seed = rng.next_u64();
  auto validation_loss = [&](const MeanFieldGaussian& candidate) {
    SeededRng noise(val_seed);
    return evaluate_objective(spec, candidate, history, prior, val_batches, noise).loss;
  };

  TaskLog log;
  log.task = t;
  AdamState mu_state, rho_state;
  EarlyStopping stopper(config.patience);
  MeanFieldGaussian best = q;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    EpochLog entry;
    entry.epoch = epoch;
    const std::vector<std::size_t> perm = shuffled(fit.size(), rng);
    std::size_t batches_run = 0;
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t stop = std::min(perm.size(), start + config.batch_size);
      std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                    perm.begin() + static_cast<std::ptrdiff_t>(stop));
      const auto batches = lag_batches(fit.subset(rows).batch(), buffer, t, lags, replay_size, rng);
      StepResult step = optimizer_step(q, spec, batches, history, prior, mu_state, rho_state,
                                       config.learning_rate, rng);
      ++log.optimizer_steps;
      ++batches_run;
      entry.train_loss += step.loss;
      for (const auto& [name, value] : step.diagnostics) entry.diagnostics[name] += value;
    }
    entry.train_loss /= static_cast<double>(batches_run);
    for (auto& [name, value] : entry.diagnostics) value /= static_cast<double>(batches_run);

    entry.validation_loss = validation_loss(q);
    if (!std::isfinite(entry.validation_loss)) throw NumericError("training: non-finite validation loss");
    entry.improved = stopper.observe(epoch, entry.validation_loss);
    if (entry.improved) best = q;

    if (log_sink != nullptr) {
      nlohmann::json line{{"event", "epoch"},
                          {"task", t},
                          {"epoch", epoch},
                          {"method", std::string(to_string(spec.kind))},
                          {"train_loss", entry.train_loss},
                          {"validation_loss", entry.validation_loss},
                          {"improved", entry.improved},
                          {"diagnostics", entry.diagnostics}};
      *log_sink << line.dump() << '\n';
    }
    log.epochs.push_back(std::move(entry));
    if (stopper.should_stop()) {
      log.stopped_early = epoch < config.max_epochs;
      break;
    }
  }
  q = std::move(best);
  log.best_epoch = stopper.best_epoch();
  log.best_validation_loss = stopper.best_loss();
  return log;
}

std::vector<double> evaluate_tasks(const MeanFieldGaussian& q, const ObjectiveSpec& spec, const TaskStream& stream,
                                   int tasks, const CoreSet* coreset, const GaussianPrior& prior,
                                   const TrainConfig& config, SeededRng& rng) {
  if (tasks < 1 || static_cast<std::size_t>(tasks) > stream.size()) {
    throw ContractError("evaluate_tasks: task count outside the stream");
  }
  MeanFieldGaussian eval_q = q;
  if (coreset != nullptr && coreset->total_examples() > 0 && config.coreset_epochs > 0) {
    // Likelihood of the core set plus KL to the propagated posterior.
    PosteriorHistory anchor(1);
    anchor.push(q, tasks);
    const ObjectiveSpec tune{ObjectiveKind::VCL, 1, 0.0, spec.beta, config.train_mc_samples};
    AdamState mu_state, rho_state;
    for (int epoch = 0; epoch < config.coreset_epochs; ++epoch) {
      for (const TaskDataset& core : coreset->tasks()) {
        const auto perm = shuffled(core.size(), rng);
        for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
          const std::size_t stop = std::min(perm.size(), start + config.batch_size);
          std::vector<std::size_t> rows(perm.begin() + static_cast<std::ptrdiff_t>(start),
                                        perm.begin() + static_cast<std::ptrdiff_t>(stop));
          const std::vector<LabeledBatch> batches{core.subset(rows).batch()};
          optimizer_step(eval_q, tune, batches, anchor, prior, mu_state, rho_state, config.learning_rate, rng);
        }
      }
    }
  }
  const int samples = spec.is_variational() ? config.eval_mc_samples : 0;
  std::vector<double> out;
  for (int k = 0; k < tasks; ++k) out.push_back(accuracy(eval_q, stream.tasks[static_cast<std::size_t>(k)].test, samples, rng));
  return out;
}

RunResult run_continual(const TaskStream& stream, ObjectiveSpec spec, const TrainConfig& config,
                        const RunOptions& options) {
  if (stream.size() == 0) throw ContractError("run_continual: empty task stream");
  config.validate();
  spec.train_mc_samples = config.train_mc_samples;
  spec.validate();

  std::vector<std::size_t> sizes{stream.input_dim()};
  sizes.insert(sizes.end(), options.hidden.begin(), options.hidden.end());
  sizes.push_back(stream.output_dim);
  const LayerSpec layers(sizes);
  const GaussianPrior prior{options.prior_variance};

  SeededRng master(config.seed);
  SeededRng init_rng = master.split();
  SeededRng train_rng = master.split();
  SeededRng replay_rng = master.split();
  SeededRng eval_rng = master.split();
  SeededRng core_rng = master.split();

  MeanFieldGaussian q = init_from_prior(layers, prior, init_rng);
  PosteriorHistory history(static_cast<std::size_t>(std::max(1, spec.horizon())));
  ReplayBuffer buffer(options.replay_tasks, options.replay_per_task);
  const bool use_coreset = spec.kind == ObjectiveKind::VCLCoreSet;
  CoreSet coreset(options.coreset_per_task > 0 ? options.coreset_per_task : options.replay_per_task);

  RunResult result{AccuracyMatrix(options.run_id, config.seed, std::string(to_string(spec.kind))), {}, {}};
  for (int t = 1; t <= static_cast<int>(stream.size()); ++t) {
    const TaskPair& task = stream.tasks[static_cast<std::size_t>(t - 1)];
    TaskDataset train = use_coreset ? coreset.reserve(task.train, core_rng) : task.train;
    train.task_id = t;

    TaskLog log = train_task(q, spec, train, buffer, history, prior, config, train_rng, options.log_sink);
    history.push(q, t);
    result.snapshots.emplace_back(q, t);
    buffer.update(train, replay_rng);

    const auto accs = evaluate_tasks(q, spec, stream, t, use_coreset ? &coreset : nullptr, prior, config, eval_rng);
    for (int k = 1; k <= t; ++k) result.accuracy.record(t, k, accs[static_cast<std::size_t>(k - 1)]);

    if (options.log_sink != nullptr) {
      nlohmann::json line{{"event", "task"},
                          {"run_id", options.run_id},
                          {"task", t},
                          {"method", std::string(to_string(spec.kind))},
                          {"epochs", log.epochs.size()},
                          {"best_epoch", log.best_epoch},
                          {"optimizer_steps", log.optimizer_steps},
                          {"accuracy", accs},
                          {"average_accuracy", avg_accuracy(result.accuracy, t)}};
      *options.log_sink << line.dump() << '\n';
    }
    result.logs.push_back(std::move(log));
  }
  return result;
}

}  // namespace tdvcl
