#include "tdvcl/objectives.hpp"

#include "tdvcl/errors.hpp"

#include <cmath>
#include <string>

namespace tdvcl {

std::string_view to_string(ObjectiveKind kind) {
  switch (kind) {
    case ObjectiveKind::OnlineMLE: return "OnlineMLE";
    case ObjectiveKind::BatchMLE: return "BatchMLE";
    case ObjectiveKind::VCL: return "VCL";
    case ObjectiveKind::VCLCoreSet: return "VCLCoreSet";
    case ObjectiveKind::NStepKL: return "NStepKL";
    case ObjectiveKind::TDLambda: return "TDLambda";
  }
  return "?";
}

ObjectiveKind parse_objective_kind(std::string_view name) {
  for (auto kind : {ObjectiveKind::OnlineMLE, ObjectiveKind::BatchMLE, ObjectiveKind::VCL,
                    ObjectiveKind::VCLCoreSet, ObjectiveKind::NStepKL, ObjectiveKind::TDLambda}) {
    if (to_string(kind) == name) return kind;
  }
  throw ContractError("unknown objective kind '" + std::string(name) + "'");
}

void ObjectiveSpec::validate() const {
  if (n < 1) throw ContractError("objective: n must be >= 1");
  if (!(lambda >= 0.0 && lambda < 1.0)) throw ContractError("objective: lambda must be in [0, 1)");
  // beta = 0 is accepted here as the tempering-off limit; configs require beta > 0.
  if (!(beta >= 0.0)) throw ContractError("objective: beta must be non-negative");
  if (train_mc_samples < 1) throw ContractError("objective: train_mc_samples must be >= 1");
}

bool ObjectiveSpec::is_variational() const noexcept {
  return kind != ObjectiveKind::OnlineMLE && kind != ObjectiveKind::BatchMLE;
}

int ObjectiveSpec::horizon() const noexcept {
  return kind == ObjectiveKind::NStepKL || kind == ObjectiveKind::TDLambda ? n : 1;
}

CoefficientSchedule nstep_coefficients(int n) {
  if (n < 1) throw ContractError("nstep_coefficients: n must be >= 1");
  CoefficientSchedule s;
  s.effective_n = n;
  for (int i = 0; i < n; ++i) {
    s.likelihood_weights.push_back(static_cast<double>(n - i) / n);
    s.kl_weights.push_back(1.0 / n);
  }
  return s;
}

CoefficientSchedule tdlambda_coefficients(int n, double lambda) {
  if (n < 1) throw ContractError("tdlambda_coefficients: n must be >= 1");
  if (!(lambda >= 0.0 && lambda < 1.0)) {
    throw ContractError("tdlambda_coefficients: lambda must be in [0, 1)");
  }
  CoefficientSchedule s;
  s.effective_n = n;
  if (lambda == 0.0) {
    s.likelihood_weights.assign(static_cast<std::size_t>(n), 0.0);
    s.kl_weights.assign(static_cast<std::size_t>(n), 0.0);
    s.likelihood_weights[0] = 1.0;
    s.kl_weights[0] = 1.0;
    return s;
  }
  // 1 - λ^k via expm1 stays accurate as λ -> 1.
  const double log_lambda = std::log1p(-(1.0 - lambda));
  auto one_minus_pow = [&](int k) { return -std::expm1(k * log_lambda); };
  const double norm = one_minus_pow(n);
  for (int i = 0; i < n; ++i) {
    const double li = std::exp(i * log_lambda);
    s.likelihood_weights.push_back(li * one_minus_pow(n - i) / norm);
    s.kl_weights.push_back(li * (1.0 - lambda) / norm);
  }
  return s;
}

CoefficientSchedule coefficients_for(const ObjectiveSpec& spec, int task_index) {
  if (task_index < 1) throw ContractError("coefficients_for: task index must be >= 1");
  const int n_t = std::min(spec.horizon(), task_index);
  switch (spec.kind) {
    case ObjectiveKind::NStepKL: return nstep_coefficients(n_t);
    case ObjectiveKind::TDLambda: return tdlambda_coefficients(n_t, spec.lambda);
    default: return nstep_coefficients(1);
  }
}

std::map<std::string, double> ObjectiveDiagnostics::named() const {
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < mean_loglik.size(); ++i) {
    if (mean_loglik[i]) out["loglik[" + std::to_string(i) + "]"] = *mean_loglik[i];
  }
  for (std::size_t i = 0; i < kl.size(); ++i) out["kl[" + std::to_string(i) + "]"] = kl[i];
  out["likelihood_term"] = likelihood_term;
  if (!kl.empty()) out["kl_term"] = kl_term;
  out["loss"] = loss;
  return out;
}

AnchorResolver::AnchorResolver(const PosteriorHistory& history, const GaussianPrior& prior,
                               const LayerSpec& layers)
    : history_(history),
      prior_mu_(layers.parameter_count(), 0.0),
      prior_sd_(layers.parameter_count(), prior.stddev()) {}

KlAnchor AnchorResolver::anchor(int task) const {
  if (task == 0) return {prior_mu_, prior_sd_};
  const PosteriorSnapshot* snap = history_.find(task);
  if (snap == nullptr) {
    throw ContractError("objective: no posterior snapshot for task " + std::to_string(task));
  }
  if (snap->posterior().size() != prior_mu_.size()) {
    throw ContractError("objective: snapshot dimension does not match live posterior");
  }
  return {snap->posterior().mu(), snap->stddev()};
}

namespace {

void require_current_batch(std::span<const LabeledBatch> batches) {
  if (batches.empty() || batches[0].empty()) {
    throw ContractError("objective: current-task batch is empty");
  }
}

Var batch_nll(Var theta, const LayerSpec& layers, const LabeledBatch& batch) {
  Var inputs = theta.tape->constant(batch.inputs);
  return ad::mean_softmax_xent(forward(theta, layers, inputs, batch.head), batch.labels);
}

ObjectiveTerms mle_objective(const ObjectiveSpec& spec, const LivePosterior& live,
                             std::span<const LabeledBatch> batches) {
  ObjectiveDiagnostics d;
  d.likelihood_weights = {1.0};
  d.beta = 0.0;
  std::vector<Var> terms;
  std::vector<double> weights;
  double pooled = 0.0;
  const std::size_t lags = spec.kind == ObjectiveKind::BatchMLE ? batches.size() : 1;
  for (std::size_t i = 0; i < lags; ++i) {
    if (batches[i].empty()) {
      d.mean_loglik.push_back(std::nullopt);
      continue;
    }
    terms.push_back(batch_nll(live.mu, live.layers, batches[i]));
    d.mean_loglik.push_back(-terms.back().item());
    weights.push_back(static_cast<double>(batches[i].size()));
    pooled += weights.back();
  }
  for (double& w : weights) w /= pooled;
  Var loss = ad::weighted_sum(terms, weights);
  d.likelihood_term = -loss.item();
  d.loss = loss.item();
  return {loss, std::move(d)};
}

}  // namespace

ObjectiveTerms evaluate_objective(const ObjectiveSpec& spec, const LivePosterior& live,
                                  const PosteriorHistory& history, const GaussianPrior& prior,
                                  std::span<const LabeledBatch> batches, SeededRng& rng) {
  spec.validate();
  require_current_batch(batches);
  if (!spec.is_variational()) return mle_objective(spec, live, batches);

  const int t = history.current_task();
  const CoefficientSchedule schedule = coefficients_for(spec, t);
  const auto lags = static_cast<std::size_t>(schedule.effective_n);

  ObjectiveDiagnostics d;
  d.likelihood_weights = schedule.likelihood_weights;
  d.kl_weights = schedule.kl_weights;
  d.beta = spec.beta;
  d.mean_loglik.assign(lags, std::nullopt);

  // Anchors first so a missing snapshot fails before any forward pass.
  const AnchorResolver anchors(history, prior, live.layers);
  std::vector<KlAnchor> anchor_for_lag;
  for (std::size_t i = 0; i < lags; ++i) {
    anchor_for_lag.push_back(anchors.anchor(t - static_cast<int>(i) - 1));
  }

  std::vector<Var> terms;
  std::vector<double> weights;
  const double per_sample = 1.0 / spec.train_mc_samples;
  std::vector<double> loglik_sum(lags, 0.0);
  for (int s = 0; s < spec.train_mc_samples; ++s) {
    Var theta = sample(live, rng);
    for (std::size_t i = 0; i < lags; ++i) {
      if (i >= batches.size() || batches[i].empty()) continue;
      Var nll = batch_nll(theta, live.layers, batches[i]);
      loglik_sum[i] -= nll.item();
      terms.push_back(nll);
      weights.push_back(schedule.likelihood_weights[i] * per_sample);
    }
  }
  for (std::size_t i = 0; i < lags; ++i) {
    if (i < batches.size() && !batches[i].empty()) {
      d.mean_loglik[i] = loglik_sum[i] * per_sample;
      d.likelihood_term += schedule.likelihood_weights[i] * *d.mean_loglik[i];
    }
  }
  for (std::size_t i = 0; i < lags; ++i) {
    Var kl = ad::kl_to_fixed(live.mu, live.rho, anchor_for_lag[i].mu, anchor_for_lag[i].sd);
    d.kl.push_back(kl.item());
    d.kl_term += schedule.kl_weights[i] * d.kl.back();
    terms.push_back(kl);
    weights.push_back(spec.beta * schedule.kl_weights[i]);
  }
  Var loss = ad::weighted_sum(terms, weights);
  d.loss = loss.item();
  return {loss, std::move(d)};
}

ObjectiveDiagnostics evaluate_objective(const ObjectiveSpec& spec, const MeanFieldGaussian& q,
                                        const PosteriorHistory& history,
                                        const GaussianPrior& prior,
                                        std::span<const LabeledBatch> batches, SeededRng& rng) {
  Tape tape;
  const auto live = LivePosterior::record(tape, q);
  return evaluate_objective(spec, live, history, prior, batches, rng).diagnostics;
}

double td_target(int k, const MeanFieldGaussian& q, const PosteriorHistory& history,
                 const GaussianPrior& prior, std::span<const LabeledBatch> batches,
                 int mc_samples, SeededRng& rng) {
  const int t = history.current_task();
  if (k < 1 || k > t) {
    throw ContractError("td_target: k = " + std::to_string(k) + " outside [1, " + std::to_string(t) + "]");
  }
  if (mc_samples < 1) throw ContractError("td_target: mc_samples must be >= 1");
  for (int i = 0; i < k; ++i) {
    if (static_cast<std::size_t>(i) >= batches.size() || batches[static_cast<std::size_t>(i)].empty()) {
      throw ContractError("td_target: no data for lag " + std::to_string(i));
    }
  }
  const AnchorResolver anchors(history, prior, q.layers());
  const KlAnchor anchor = anchors.anchor(t - k);

  double loglik = 0.0;
  for (int s = 0; s < mc_samples; ++s) {
    // Same draw order as evaluate_objective: one noise vector per sample.
    const std::vector<double> eps = draw_noise(q.size(), rng);
    std::vector<double> theta(q.size());
    for (std::size_t j = 0; j < q.size(); ++j) theta[j] = q.mu()[j] + softplus(q.rho()[j]) * eps[j];
    for (int i = 0; i < k; ++i) {
      const LabeledBatch& b = batches[static_cast<std::size_t>(i)];
      const Tensor logits = forward(theta, q.layers(), b.inputs, b.head);
      double nll = 0.0;
      for (std::size_t r = 0; r < b.size(); ++r) {
        Tensor row({logits.cols()});
        for (std::size_t c = 0; c < logits.cols(); ++c) row[c] = logits.at(r, c);
        nll += softmax_xent(row, static_cast<std::size_t>(b.labels[r])).loss;
      }
      loglik -= nll / static_cast<double>(b.size());
    }
  }
  loglik /= mc_samples;
  return loglik - kl_diag(q.mu(), q.stddev(), anchor.mu, anchor.sd);
}

double compound_identity_residual(int n, double lambda, const MeanFieldGaussian& q,
                                  const PosteriorHistory& history, const GaussianPrior& prior,
                                  std::span<const LabeledBatch> batches, int mc_samples,
                                  SeededRng& rng) {
  if (n > history.current_task()) {
    throw ContractError("compound_identity_residual: n exceeds the number of observed tasks");
  }
  const ObjectiveSpec spec{ObjectiveKind::TDLambda, n, lambda, 1.0, mc_samples};
  const SeededRng start = rng;

  SeededRng objective_rng = start;
  const double objective = -evaluate_objective(spec, q, history, prior, batches, objective_rng).loss;

  double discounted = 0.0;
  double lambda_k = 1.0;
  for (int k = 0; k < n; ++k) {
    SeededRng target_rng = start;
    discounted += lambda_k * td_target(k + 1, q, history, prior, batches, mc_samples, target_rng);
    lambda_k *= lambda;
  }
  // (1 - λ) / (1 - λ^n); equals 1 at λ = 0 (0^0 = 1) and for n = 1.
  const double normalizer = (1.0 - lambda) / (1.0 - std::pow(lambda, n));
  rng = objective_rng;
  return std::abs(objective - normalizer * discounted);
}

}  // namespace tdvcl
