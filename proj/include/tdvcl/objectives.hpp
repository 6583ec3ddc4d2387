#pragma once

#include "tdvcl/autodiff.hpp"
#include "tdvcl/network.hpp"
#include "tdvcl/rng.hpp"
#include "tdvcl/tensor.hpp"
#include "tdvcl/vardist.hpp"

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tdvcl {

enum class ObjectiveKind { OnlineMLE, BatchMLE, VCL, VCLCoreSet, NStepKL, TDLambda };

std::string_view to_string(ObjectiveKind kind);
/// Accepts the enumerator names above; throws ContractError otherwise.
ObjectiveKind parse_objective_kind(std::string_view name);

struct ObjectiveSpec {
  ObjectiveKind kind = ObjectiveKind::VCL;
  int n = 1;            // NStepKL, TDLambda
  double lambda = 0.0;  // TDLambda, in [0, 1)
  double beta = 1.0;    // multiplies the summed KL terms
  int train_mc_samples = 5;

  void validate() const;
  bool is_variational() const noexcept;
  /// Number of lags the objective reaches back once enough tasks exist.
  int horizon() const noexcept;
};

/// Per-lag weights: loss = -Σ w_i E[log p(D_{t-i})] + beta Σ v_i KL(q || q_{t-i-1}).
struct CoefficientSchedule {
  std::vector<double> likelihood_weights;
  std::vector<double> kl_weights;
  int effective_n = 0;
};

/// w_i = (n - i) / n, v_i = 1 / n.
CoefficientSchedule nstep_coefficients(int n);
/// w_i = λ^i (1 - λ^{n-i}) / (1 - λ^n), v_i = λ^i (1 - λ) / (1 - λ^n), with 0^0 = 1.
CoefficientSchedule tdlambda_coefficients(int n, double lambda);
/// Schedule used while learning task `task_index` (1-based): n is clamped to
/// min(n, task_index) so the weights stay normalised on early tasks.
CoefficientSchedule coefficients_for(const ObjectiveSpec& spec, int task_index);

/// Labelled examples routed to one classifier head. An empty batch marks a
/// lag whose data the replay restrictions do not keep.
struct LabeledBatch {
  Tensor inputs;
  std::vector<int> labels;
  Head head;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
};

struct ObjectiveDiagnostics {
  std::vector<std::optional<double>> mean_loglik;  // per lag; nullopt when no data
  std::vector<double> kl;                          // KL(q || q_{t-i-1}); empty for MLE
  std::vector<double> likelihood_weights;
  std::vector<double> kl_weights;
  double beta = 0.0;
  double likelihood_term = 0.0;  // Σ w_i mean_loglik_i over lags with data
  double kl_term = 0.0;          // Σ v_i KL_i, before beta
  double loss = 0.0;

  /// Flat name -> value map ("loglik[0]", "kl[1]", "loss", ...).
  std::map<std::string, double> named() const;
};

struct ObjectiveTerms {
  Var loss;
  ObjectiveDiagnostics diagnostics;
};

/// Records the loss of `spec` for the live posterior on its tape.
///
/// `batches[i]` holds data of task t - i where t = history.current_task().
/// Variational kinds draw train_mc_samples noise vectors once and reuse them
/// for every lag. MLE kinds evaluate the network at mu and record no KL.
/// BatchMLE pools all non-empty batches into one mean log-likelihood.
ObjectiveTerms evaluate_objective(const ObjectiveSpec& spec, const LivePosterior& live,
                                  const PosteriorHistory& history, const GaussianPrior& prior,
                                  std::span<const LabeledBatch> batches, SeededRng& rng);

/// Value-only convenience over a plain posterior.
ObjectiveDiagnostics evaluate_objective(const ObjectiveSpec& spec, const MeanFieldGaussian& q,
                                        const PosteriorHistory& history,
                                        const GaussianPrior& prior,
                                        std::span<const LabeledBatch> batches, SeededRng& rng);

/// k-step target: Σ_{i<k} E[log p(D_{t-i})] - KL(q || q_{t-k}), estimated
/// with `mc_samples` shared draws (same draw order as evaluate_objective).
double td_target(int k, const MeanFieldGaussian& q, const PosteriorHistory& history,
                 const GaussianPrior& prior, std::span<const LabeledBatch> batches,
                 int mc_samples, SeededRng& rng);

/// |TDλ objective - (1-λ)/(1-λ^n) Σ_k λ^k TD(k+1)| with every term evaluated
/// on the same noise draws. The objective side uses beta = 1 and is
/// sign-positive (likelihoods minus KLs).
double compound_identity_residual(int n, double lambda, const MeanFieldGaussian& q,
                                  const PosteriorHistory& history, const GaussianPrior& prior,
                                  std::span<const LabeledBatch> batches, int mc_samples,
                                  SeededRng& rng);

/// Anchor for lag i while learning task t: q_{t-i-1}, the prior when that index is 0.
struct KlAnchor {
  std::span<const double> mu;
  std::span<const double> sd;
};

class AnchorResolver {
 public:
  AnchorResolver(const PosteriorHistory& history, const GaussianPrior& prior,
                 const LayerSpec& layers);
  /// Anchor for task index `task` (0 is the prior); ContractError if evicted.
  KlAnchor anchor(int task) const;

 private:
  const PosteriorHistory& history_;
  std::vector<double> prior_mu_;
  std::vector<double> prior_sd_;
};

}  // namespace tdvcl
