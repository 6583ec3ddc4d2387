#include "tdvcl/checks.hpp"

#include "tdvcl/errors.hpp"
#include "tdvcl/finite_diff.hpp"
#include "tdvcl/objectives.hpp"
#include "tdvcl/oracle.hpp"
#include "tdvcl/tasks.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <numeric>
#include <sstream>

namespace tdvcl {

namespace {

CheckResult verdict(std::string name, double value, double bound, std::string detail = {}) {
  return {std::move(name), value < bound, value, bound, std::move(detail)};
}

MeanFieldGaussian random_posterior(const LayerSpec& layers, SeededRng& rng) {
  std::vector<double> mu(layers.parameter_count()), rho(layers.parameter_count());
  for (double& v : mu) v = 0.4 * rng.normal();
  for (double& v : rho) v = -1.5 + 0.3 * rng.normal();
  return MeanFieldGaussian(layers, std::move(mu), std::move(rho));
}

LabeledBatch random_batch(const LayerSpec& layers, std::size_t rows, SeededRng& rng) {
  LabeledBatch b{Tensor({rows, layers.input_dim()}), {}, {}};
  for (double& v : b.inputs.data()) v = rng.normal();
  for (std::size_t r = 0; r < rows; ++r) b.labels.push_back(static_cast<int>(rng.below(layers.output_dim())));
  return b;
}

// Learning task t: snapshots of tasks 1..t-1 plus one batch per lag.
struct Scenario {
  LayerSpec layers;
  MeanFieldGaussian q;
  PosteriorHistory history{16};
  std::vector<LabeledBatch> batches;

  Scenario(LayerSpec spec, int t, SeededRng& rng) : layers(std::move(spec)) {
    for (int task = 1; task < t; ++task) history.push(random_posterior(layers, rng), task);
    q = random_posterior(layers, rng);
    for (int i = 0; i < t; ++i) batches.push_back(random_batch(layers, 3 + rng.below(5), rng));
  }
};

LayerSpec random_small_layers(SeededRng& rng) {
  return LayerSpec({2 + rng.below(4), 2 + rng.below(5), 2 + rng.below(3)});
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

double log_normal_pdf(double x, double mean, double sd) {
  const double z = (x - mean) / sd;
  return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
}

}  // namespace

bool CheckReport::passed() const noexcept {
  return std::all_of(results.begin(), results.end(), [](const CheckResult& r) { return r.passed; });
}

nlohmann::json CheckReport::to_json() const {
  nlohmann::json out{{"suite", suite}, {"passed", passed()}, {"seconds", seconds}, {"checks", nlohmann::json::array()}};
  for (const auto& r : results) {
    out["checks"].push_back({{"name", r.name}, {"passed", r.passed}, {"value", r.value}, {"bound", r.bound},
                             {"detail", r.detail}});
  }
  return out;
}

CheckResult check_coefficient_grid() {
  const double lambdas[] = {0.0, 0.1, 0.5, 0.9, 1.0 - 1e-9};
  double sum_error = 0.0, vcl_error = 0.0, limit_error = 0.0;
  for (int n = 1; n <= 10; ++n) {
    const CoefficientSchedule nstep = nstep_coefficients(n);
    std::vector<double> vcl(static_cast<std::size_t>(n), 0.0);
    vcl[0] = 1.0;
    for (double lambda : lambdas) {
      const CoefficientSchedule td = tdlambda_coefficients(n, lambda);
      for (const auto* s : {&td, &nstep}) {
        sum_error = std::max(sum_error,
                             std::abs(std::accumulate(s->kl_weights.begin(), s->kl_weights.end(), 0.0) - 1.0));
      }
      if (lambda == 0.0) {
        vcl_error = std::max({vcl_error, max_abs_diff(td.likelihood_weights, vcl), max_abs_diff(td.kl_weights, vcl)});
      }
      if (lambda > 0.99) {
        limit_error = std::max({limit_error, max_abs_diff(td.likelihood_weights, nstep.likelihood_weights),
                                max_abs_diff(td.kl_weights, nstep.kl_weights)});
      }
    }
  }
  std::ostringstream detail;
  detail << "max|sum v - 1|=" << sum_error << " max|td(0) - vcl|=" << vcl_error
         << " max|td(1-1e-9) - nstep|=" << limit_error;
  CheckResult r{"coefficient grid", sum_error < 1e-12 && vcl_error < 1e-12 && limit_error < 1e-6,
                std::max(sum_error, limit_error), 1e-6, detail.str()};
  return r;
}

CheckResult check_compound_identity(int networks) {
  SeededRng meta(2024);
  const GaussianPrior prior{0.5};
  double worst = 0.0;
  for (int net = 0; net < networks; ++net) {
    const LayerSpec layers = random_small_layers(meta);
    for (int n : {2, 3, 5, 8}) {
      Scenario sc(layers, n + static_cast<int>(meta.below(2)), meta);
      for (double lambda : {0.1, 0.5, 0.9}) {
        SeededRng rng(meta.next_u64());
        worst = std::max(worst,
                         compound_identity_residual(n, lambda, sc.q, sc.history, prior, sc.batches, 3, rng));
      }
    }
  }
  return verdict("TD(lambda) objective equals normalised discounted TD targets", worst, 1e-8,
                 std::to_string(networks) + " networks x n{2,3,5,8} x lambda{0.1,0.5,0.9}");
}

CheckResult check_objective_equivalences(int trials) {
  SeededRng meta(77);
  const GaussianPrior prior{0.5};
  double worst = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Scenario sc(random_small_layers(meta), 1 + static_cast<int>(meta.below(5)), meta);
    const std::uint64_t seed = meta.next_u64();
    auto loss = [&](ObjectiveSpec spec) {
      SeededRng rng(seed);
      return evaluate_objective(spec, sc.q, sc.history, prior, sc.batches, rng).loss;
    };
    const double beta = 0.01 + meta.uniform();
    const double vcl = loss({ObjectiveKind::VCL, 1, 0.0, beta, 4});
    worst = std::max(worst, std::abs(vcl - loss({ObjectiveKind::NStepKL, 1, 0.0, beta, 4})));
    worst = std::max(worst, std::abs(vcl - loss({ObjectiveKind::TDLambda, 1 + static_cast<int>(meta.below(6)), 0.0,
                                                 beta, 4})));
  }
  return verdict("NStepKL(1) and TDLambda(0) equal VCL", worst, 1e-12, std::to_string(trials) + " seeded scenarios");
}

CheckResult check_objective_gradient() {
  SeededRng rng(303);
  Scenario sc(LayerSpec({6, 10, 10, 3}), 3, rng);
  const GaussianPrior prior{0.5};
  const ObjectiveSpec spec{ObjectiveKind::TDLambda, 3, 0.5, 0.1, 2};

  Tape tape;
  const auto live = LivePosterior::record(tape, sc.q);
  SeededRng noise(8);
  auto terms = evaluate_objective(spec, live, sc.history, prior, sc.batches, noise);
  tape.backward(terms.loss);
  std::vector<double> analytic(live.mu.grad().data().begin(), live.mu.grad().data().end());
  analytic.insert(analytic.end(), live.rho.grad().data().begin(), live.rho.grad().data().end());

  std::vector<double> joint(sc.q.mu().begin(), sc.q.mu().end());
  joint.insert(joint.end(), sc.q.rho().begin(), sc.q.rho().end());
  const auto p = static_cast<std::ptrdiff_t>(sc.q.size());
  auto f = [&](const std::vector<double>& x) {
    MeanFieldGaussian q(sc.layers, {x.begin(), x.begin() + p}, {x.begin() + p, x.end()});
    SeededRng r(8);
    return evaluate_objective(spec, q, sc.history, prior, sc.batches, r).loss;
  };
  const double err = numdiff::max_relative_error(analytic, numdiff::central_difference(f, joint));
  return verdict("objective gradient vs central differences", err, 1e-4,
                 std::to_string(analytic.size()) + " coordinates (mu and rho), [10,10] net, TD(0.5) n=3");
}

CheckResult check_kl_monte_carlo(int pairs, int draws) {
  SeededRng rng(5150);
  double worst_z = 0.0;
  for (int pair = 0; pair < pairs; ++pair) {
    const std::size_t dim = 1 + rng.below(4);
    std::vector<double> mq(dim), sq(dim), mp(dim), sp(dim);
    for (std::size_t k = 0; k < dim; ++k) {
      mq[k] = rng.normal();
      mp[k] = rng.normal();
      sq[k] = 0.3 + rng.uniform();
      sp[k] = 0.3 + rng.uniform();
    }
    double sum = 0.0, sum_sq = 0.0;
    for (int d = 0; d < draws; ++d) {
      double log_ratio = 0.0;
      for (std::size_t k = 0; k < dim; ++k) {
        const double x = mq[k] + sq[k] * rng.normal();
        log_ratio += log_normal_pdf(x, mq[k], sq[k]) - log_normal_pdf(x, mp[k], sp[k]);
      }
      sum += log_ratio;
      sum_sq += log_ratio * log_ratio;
    }
    const double mean = sum / draws;
    const double se = std::sqrt((sum_sq / draws - mean * mean) / draws);
    worst_z = std::max(worst_z, std::abs(kl_diag(mq, sq, mp, sp) - mean) / se);
  }
  CheckResult r = verdict("analytic KL within 3 standard errors of Monte Carlo", worst_z, 3.0,
                          std::to_string(pairs) + " pairs x " + std::to_string(draws) + " draws; value is max |z|");
  return r;
}

CheckResult check_conjugate_recursion(int streams) {
  double worst = 0.0;
  for (int s = 0; s < streams; ++s) {
    SeededRng rng(static_cast<std::uint64_t>(s));
    ConjugateStreamOptions opt;
    opt.orthogonal = s % 2 == 0;
    opt.dim = 2 + static_cast<std::size_t>(s % 5);
    auto stream = make_conjugate_stream(opt, rng);
    const auto sequential = exact_trajectory(stream);
    // Joint update: stack every task's rows into one design.
    Eigen::Index rows = 0;
    for (const auto& t : stream.tasks) rows += t.X.rows();
    Eigen::MatrixXd X(rows, stream.prior.mean.size());
    Eigen::VectorXd y(rows);
    Eigen::Index at = 0;
    for (const auto& t : stream.tasks) {
      X.middleRows(at, t.X.rows()) = t.X;
      y.segment(at, t.X.rows()) = t.y;
      at += t.X.rows();
    }
    const auto joint = exact_update(stream.prior, X, y, stream.noise_var);
    worst = std::max({worst, (sequential.back().mean - joint.mean).cwiseAbs().maxCoeff(),
                      (sequential.back().cov - joint.cov).cwiseAbs().maxCoeff()});
  }
  return verdict("sequential conjugate updates equal the joint update", worst, 1e-10,
                 std::to_string(streams) + " random streams");
}

CheckResult check_zero_noise_recursion(int streams) {
  double worst = 0.0;
  for (int s = 0; s < streams; ++s) {
    SeededRng rng(100 + static_cast<std::uint64_t>(s));
    auto stream = make_conjugate_stream({}, rng);
    const auto truth = exact_trajectory(stream);
    for (auto mode : {RecursionMode::single_step(), RecursionMode::n_step(3)}) {
      SeededRng noise(1);
      const auto approx = perturbed_recursion(stream, 0.0, mode, noise);
      for (std::size_t t = 0; t < truth.size(); ++t) {
        worst = std::max({worst, (approx[t].mean - truth[t].mean).cwiseAbs().maxCoeff(),
                          (approx[t].cov - truth[t].cov).cwiseAbs().maxCoeff()});
      }
    }
  }
  return verdict("zero-noise variational recursion recovers the exact posteriors", worst, 1e-6,
                 std::to_string(streams) + " orthogonal streams, single_step and n_step(3)");
}

CheckResult check_compounding_error(int seeds, double noise_scale) {
  std::vector<double> single, nstep;
  for (int s = 0; s < seeds; ++s) {
    SeededRng rng(1000 + static_cast<std::uint64_t>(s));
    auto stream = make_conjugate_stream({}, rng);
    const auto truth = exact_trajectory(stream);
    SeededRng a(static_cast<std::uint64_t>(s)), b(static_cast<std::uint64_t>(s));
    single.push_back(kl_to_truth(perturbed_recursion(stream, noise_scale, RecursionMode::single_step(), a).back(),
                                 truth.back()));
    nstep.push_back(kl_to_truth(perturbed_recursion(stream, noise_scale, RecursionMode::n_step(3), b).back(),
                                truth.back()));
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
  };
  const double ms = median(single), mn = median(nstep);
  std::ostringstream detail;
  detail << seeds << " seeds, noise " << noise_scale << ": median KL single_step=" << ms << " n_step(3)=" << mn;
  return {"n_step(3) drifts less than single_step", mn < ms, mn / ms, 1.0, detail.str()};
}

CheckResult check_replay_restriction(int sequences) {
  SeededRng rng(909);
  std::size_t violations = 0, worst_fill = 0, capacity_at_worst = 0;
  for (int seq = 0; seq < sequences; ++seq) {
    const std::size_t T = rng.below(5), B = 1 + rng.below(50);
    ReplayBuffer buffer(T, B);
    const int tasks = 1 + static_cast<int>(rng.below(12));
    for (int t = 1; t <= tasks; ++t) {
      // Each row carries its task id in column 0, so leaked rows are visible.
      const std::size_t n = 1 + rng.below(80);
      TaskDataset data{Tensor({n, 3}), std::vector<int>(n, 0), t, 2, {}};
      for (std::size_t r = 0; r < n; ++r) {
        data.inputs.at(r, 0) = t;
        data.inputs.at(r, 1) = rng.uniform();
        data.labels[r] = static_cast<int>(rng.below(2));
      }
      if (buffer.total_examples() > T * B) ++violations;
      if (buffer.total_examples() >= worst_fill) {
        worst_fill = buffer.total_examples();
        capacity_at_worst = T * B;
      }
      for (int id : buffer.stored_tasks()) {
        if (id >= t || id < t - static_cast<int>(T)) ++violations;
      }
      for (int lag = 1; lag <= static_cast<int>(T) + 1; ++lag) {
        const LabeledBatch batch = buffer.batch(t, lag, 16, rng);
        for (std::size_t r = 0; r < batch.size(); ++r) {
          if (batch.inputs.at(r, 0) >= t) ++violations;
        }
      }
      buffer.update(data, rng);
    }
  }
  std::ostringstream detail;
  detail << sequences << " random sequences; largest fill " << worst_fill << " of capacity " << capacity_at_worst;
  return {"replay buffer bounded by T*B and free of current-task rows", violations == 0,
          static_cast<double>(violations), 1.0, detail.str()};
}

const std::vector<std::string>& check_suite_names() {
  static const std::vector<std::string> names{"coefficients", "propositions", "gradients", "oracle"};
  return names;
}

CheckReport run_check_suite(std::string_view suite) {
  const auto start = std::chrono::steady_clock::now();
  CheckReport report{std::string(suite), {}, 0.0};
  if (suite == "coefficients") {
    report.results.push_back(check_coefficient_grid());
  } else if (suite == "propositions") {
    report.results.push_back(check_compound_identity());
    report.results.push_back(check_objective_equivalences());
    report.results.push_back(check_kl_monte_carlo());
    report.results.push_back(check_replay_restriction());
  } else if (suite == "gradients") {
    report.results.push_back(check_objective_gradient());
  } else if (suite == "oracle") {
    report.results.push_back(check_conjugate_recursion());
    report.results.push_back(check_zero_noise_recursion());
    report.results.push_back(check_compounding_error());
  } else {
    throw ContractError("unknown check suite '" + std::string(suite) + "'");
  }
  report.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace tdvcl
