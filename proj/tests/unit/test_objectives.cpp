#include "doctest.h"

#include "tdvcl/finite_diff.hpp"
#include "tdvcl/errors.hpp"
#include "tdvcl/objectives.hpp"

#include <cmath>
#include <numeric>

using namespace tdvcl;

namespace {

const LayerSpec kLayers({4, 5, 3});
const GaussianPrior kPrior{0.5};

MeanFieldGaussian random_posterior(SeededRng& rng) {
  std::vector<double> mu(kLayers.parameter_count()), rho(kLayers.parameter_count());
  for (double& v : mu) v = 0.4 * rng.normal();
  for (double& v : rho) v = -1.5 + 0.3 * rng.normal();
  return MeanFieldGaussian(kLayers, mu, rho);
}

LabeledBatch random_batch(SeededRng& rng, std::size_t n) {
  LabeledBatch b{Tensor({n, kLayers.input_dim()}), {}, {}};
  for (double& v : b.inputs.data()) v = rng.normal();
  for (std::size_t r = 0; r < n; ++r) b.labels.push_back(static_cast<int>(rng.below(3)));
  return b;
}

// Learning task `t` with snapshots of tasks 1..t-1 available.
struct Scenario {
  MeanFieldGaussian q;
  PosteriorHistory history{8};
  std::vector<LabeledBatch> batches;

  Scenario(int t, std::uint64_t seed) {
    SeededRng rng(seed);
    for (int task = 1; task < t; ++task) history.push(random_posterior(rng), task);
    q = random_posterior(rng);
    for (int i = 0; i < t; ++i) batches.push_back(random_batch(rng, 3 + rng.below(5)));
  }
};

double mean_nll(std::span<const double> theta, const LabeledBatch& b) {
  const Tensor logits = forward(theta, kLayers, b.inputs, b.head);
  double total = 0.0;
  for (std::size_t r = 0; r < b.size(); ++r) {
    Tensor row({logits.cols()});
    for (std::size_t c = 0; c < logits.cols(); ++c) row[c] = logits.at(r, c);
    total += softmax_xent(row, static_cast<std::size_t>(b.labels[r])).loss;
  }
  return total / static_cast<double>(b.size());
}

}  // namespace

TEST_CASE("coefficients: n-step examples") {
  auto s2 = nstep_coefficients(2);
  CHECK(s2.likelihood_weights == std::vector<double>{1.0, 0.5});
  CHECK(s2.kl_weights == std::vector<double>{0.5, 0.5});
  auto s3 = nstep_coefficients(3);
  CHECK(s3.likelihood_weights[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s3.likelihood_weights[2] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(nstep_coefficients(1).likelihood_weights == std::vector<double>{1.0});
}

TEST_CASE("coefficients: TD(lambda) examples") {
  auto s = tdlambda_coefficients(2, 0.5);
  CHECK(s.likelihood_weights[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(s.likelihood_weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(s.kl_weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
  CHECK(s.kl_weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  auto z = tdlambda_coefficients(4, 0.0);
  CHECK(z.likelihood_weights == std::vector<double>{1.0, 0.0, 0.0, 0.0});
  CHECK(z.kl_weights == std::vector<double>{1.0, 0.0, 0.0, 0.0});
}

TEST_CASE("coefficients: lambda near one recovers n-step") {
  auto td = tdlambda_coefficients(5, 1.0 - 1e-9);
  auto ns = nstep_coefficients(5);
  for (int i = 0; i < 5; ++i) {
    CHECK(std::abs(td.likelihood_weights[i] - ns.likelihood_weights[i]) < 1e-6);
    CHECK(std::abs(td.kl_weights[i] - ns.kl_weights[i]) < 1e-6);
  }
}

TEST_CASE("property: coefficient invariants over random n and lambda") {
  SeededRng rng(31);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(12));
    const double lambda = rng.uniform() * 0.999;
    for (const auto& s : {tdlambda_coefficients(n, lambda), nstep_coefficients(n)}) {
      REQUIRE(s.likelihood_weights.size() == static_cast<std::size_t>(n));
      CHECK(std::accumulate(s.kl_weights.begin(), s.kl_weights.end(), 0.0) ==
            doctest::Approx(1.0).epsilon(1e-12));
      CHECK(s.likelihood_weights[0] == doctest::Approx(1.0).epsilon(1e-12));
      for (int i = 1; i < n; ++i) {
        CHECK(s.likelihood_weights[i] <= s.likelihood_weights[i - 1] + 1e-15);
        CHECK(s.kl_weights[i] <= s.kl_weights[i - 1] + 1e-15);
      }
    }
    // Independent route: w_i = v_i (1 - λ^{n-i}) / (1 - λ), written with pow.
    auto s = tdlambda_coefficients(n, lambda);
    const double norm = 1.0 - std::pow(lambda, n);
    for (int i = 0; i < n; ++i) {
      const double v = std::pow(lambda, i) * (1.0 - lambda) / norm;
      CHECK(s.kl_weights[i] == doctest::Approx(v).epsilon(1e-10));
      CHECK(s.likelihood_weights[i] ==
            doctest::Approx(v * (1.0 - std::pow(lambda, n - i)) / (1.0 - lambda)).epsilon(1e-10));
    }
  }
}

TEST_CASE("coefficients: horizon clamps on early tasks") {
  ObjectiveSpec spec{ObjectiveKind::NStepKL, 5, 0.0, 1.0, 1};
  CHECK(coefficients_for(spec, 1).effective_n == 1);
  CHECK(coefficients_for(spec, 3).effective_n == 3);
  CHECK(coefficients_for(spec, 9).effective_n == 5);
  CHECK(coefficients_for({ObjectiveKind::VCL}, 9).effective_n == 1);
  CHECK_THROWS_AS(nstep_coefficients(0), ContractError);
  CHECK_THROWS_AS(tdlambda_coefficients(3, 1.0), ContractError);
  CHECK_THROWS_AS(tdlambda_coefficients(3, -0.1), ContractError);
}

TEST_CASE("objective kinds: names round-trip") {
  for (auto k : {ObjectiveKind::OnlineMLE, ObjectiveKind::BatchMLE, ObjectiveKind::VCL,
                 ObjectiveKind::VCLCoreSet, ObjectiveKind::NStepKL, ObjectiveKind::TDLambda}) {
    CHECK(parse_objective_kind(to_string(k)) == k);
  }
  CHECK_THROWS_AS(parse_objective_kind("vcl"), ContractError);
}

TEST_CASE("objective: VCL, one-step KL and TD(0) coincide") {
  Scenario sc(4, 5);
  auto run = [&](ObjectiveSpec spec) {
    SeededRng rng(99);
    return evaluate_objective(spec, sc.q, sc.history, kPrior, sc.batches, rng).loss;
  };
  const double vcl = run({ObjectiveKind::VCL, 1, 0.0, 1.0, 5});
  CHECK(std::abs(vcl - run({ObjectiveKind::NStepKL, 1, 0.0, 1.0, 5})) < 1e-12);
  CHECK(std::abs(vcl - run({ObjectiveKind::TDLambda, 3, 0.0, 1.0, 5})) < 1e-12);
}

TEST_CASE("objective: without KL the loss is the plain mean NLL") {
  Scenario sc(1, 8);
  SeededRng rng(4), oracle_rng(4);
  const ObjectiveSpec spec{ObjectiveKind::VCL, 1, 0.0, 0.0, 3};
  const double loss = evaluate_objective(spec, sc.q, sc.history, kPrior, sc.batches, rng).loss;
  double expected = 0.0;
  for (int s = 0; s < 3; ++s) expected += mean_nll(sample(sc.q, oracle_rng), sc.batches[0]) / 3.0;
  CHECK(loss == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("objective: first task anchors on the prior") {
  Scenario sc(1, 12);
  SeededRng rng(1);
  auto d = evaluate_objective({ObjectiveKind::TDLambda, 3, 0.5, 1.0, 2}, sc.q, sc.history, kPrior,
                              sc.batches, rng);
  REQUIRE(d.kl.size() == 1);
  CHECK(d.kl[0] == doctest::Approx(kl_diag(sc.q, kPrior)).epsilon(1e-12));
}

TEST_CASE("objective: n-step diagnostics recompose the loss") {
  Scenario sc(4, 21);
  SeededRng rng(3);
  const ObjectiveSpec spec{ObjectiveKind::NStepKL, 3, 0.0, 0.25, 4};
  auto d = evaluate_objective(spec, sc.q, sc.history, kPrior, sc.batches, rng);
  REQUIRE(d.kl.size() == 3);
  for (int i = 0; i < 3; ++i) {
    const PosteriorSnapshot* anchor = sc.history.find(4 - i - 1);
    REQUIRE(anchor != nullptr);
    CHECK(d.kl[i] == doctest::Approx(kl_diag(sc.q, anchor->posterior())).epsilon(1e-12));
  }
  double recomposed = 0.0;
  for (int i = 0; i < 3; ++i) {
    recomposed += -d.likelihood_weights[i] * *d.mean_loglik[i] + 0.25 * d.kl_weights[i] * d.kl[i];
  }
  CHECK(d.loss == doctest::Approx(recomposed).epsilon(1e-12));
  CHECK(d.named().count("kl[2]") == 1);
}

TEST_CASE("objective: a lag without replay data drops only its likelihood") {
  Scenario sc(3, 40);
  sc.batches[1] = LabeledBatch{};
  SeededRng rng(6);
  auto d = evaluate_objective({ObjectiveKind::NStepKL, 3, 0.0, 1.0, 2}, sc.q, sc.history, kPrior,
                              sc.batches, rng);
  CHECK_FALSE(d.mean_loglik[1].has_value());
  CHECK(d.kl.size() == 3);
  CHECK(d.likelihood_term == doctest::Approx(*d.mean_loglik[0] + d.likelihood_weights[2] * *d.mean_loglik[2]));
}

TEST_CASE("objective: gradients match finite differences") {
  Scenario sc(3, 17);
  const ObjectiveSpec spec{ObjectiveKind::TDLambda, 3, 0.6, 0.1, 2};
  Tape tape;
  const auto live = LivePosterior::record(tape, sc.q);
  SeededRng rng(8);
  auto terms = evaluate_objective(spec, live, sc.history, kPrior, sc.batches, rng);
  tape.backward(terms.loss);
  std::vector<double> analytic(live.mu.grad().data().begin(), live.mu.grad().data().end());
  analytic.insert(analytic.end(), live.rho.grad().data().begin(), live.rho.grad().data().end());

  std::vector<double> joint(sc.q.mu().begin(), sc.q.mu().end());
  joint.insert(joint.end(), sc.q.rho().begin(), sc.q.rho().end());
  const std::size_t p = sc.q.size();
  auto f = [&](const std::vector<double>& x) {
    MeanFieldGaussian q(kLayers, {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(p)},
                        {x.begin() + static_cast<std::ptrdiff_t>(p), x.end()});
    SeededRng r(8);
    return evaluate_objective(spec, q, sc.history, kPrior, sc.batches, r).loss;
  };
  CHECK(numdiff::max_relative_error(analytic, numdiff::central_difference(f, joint)) < 1e-4);
}

TEST_CASE("objective: MLE kinds ignore the posterior spread") {
  Scenario sc(3, 50);
  SeededRng rng(2);
  auto online = evaluate_objective({ObjectiveKind::OnlineMLE}, sc.q, sc.history, kPrior, sc.batches, rng);
  CHECK(online.loss == doctest::Approx(mean_nll(sc.q.mu(), sc.batches[0])).epsilon(1e-12));
  CHECK(online.kl.empty());

  auto batch = evaluate_objective({ObjectiveKind::BatchMLE}, sc.q, sc.history, kPrior, sc.batches, rng);
  double total = 0.0, count = 0.0;
  for (const auto& b : sc.batches) {
    total += mean_nll(sc.q.mu(), b) * static_cast<double>(b.size());
    count += static_cast<double>(b.size());
  }
  CHECK(batch.loss == doctest::Approx(total / count).epsilon(1e-12));
}

TEST_CASE("td_target: one step equals the VCL objective") {
  Scenario sc(3, 60);
  SeededRng a(10), b(10);
  const double target = td_target(1, sc.q, sc.history, kPrior, sc.batches, 5, a);
  const double vcl = evaluate_objective({ObjectiveKind::VCL, 1, 0.0, 1.0, 5}, sc.q, sc.history,
                                        kPrior, sc.batches, b).loss;
  CHECK(target == doctest::Approx(-vcl).epsilon(1e-12));
}

TEST_CASE("td_target: zero KL when the live posterior equals its anchor") {
  Scenario sc(3, 61);
  const MeanFieldGaussian anchor = sc.history.find(1)->posterior();
  SeededRng a(10), b(10);
  const double target = td_target(2, anchor, sc.history, kPrior, sc.batches, 3, a);
  double loglik = 0.0;
  for (int s = 0; s < 3; ++s) {
    const auto theta = sample(anchor, b);
    loglik -= (mean_nll(theta, sc.batches[0]) + mean_nll(theta, sc.batches[1])) / 3.0;
  }
  CHECK(target == doctest::Approx(loglik).epsilon(1e-12));
}

TEST_CASE("td_target: matches objective diagnostics") {
  Scenario sc(4, 62);
  SeededRng a(5);
  auto d = evaluate_objective({ObjectiveKind::NStepKL, 4, 0.0, 1.0, 3}, sc.q, sc.history, kPrior,
                              sc.batches, a);
  for (int k = 1; k <= 4; ++k) {
    SeededRng b(5);
    double expected = -d.kl[static_cast<std::size_t>(k - 1)];
    for (int i = 0; i < k; ++i) expected += *d.mean_loglik[static_cast<std::size_t>(i)];
    CHECK(td_target(k, sc.q, sc.history, kPrior, sc.batches, 3, b) ==
          doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("compound identity: single step is exact up to rounding") {
  Scenario sc(2, 70);
  SeededRng rng(1);
  CHECK(compound_identity_residual(1, 0.7, sc.q, sc.history, kPrior, sc.batches, 4, rng) < 1e-12);
}

TEST_CASE("property: compound identity holds on random inputs") {
  SeededRng meta(71);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(meta.below(4));
    Scenario sc(n + static_cast<int>(meta.below(2)), meta.next_u64());
    SeededRng rng(meta.next_u64());
    const double lambda = meta.uniform() * 0.99;
    worst = std::max(worst, compound_identity_residual(n, lambda, sc.q, sc.history, kPrior,
                                                       sc.batches, 2, rng));
  }
  CHECK(worst < 1e-8);
}

TEST_CASE("objective: error paths") {
  Scenario sc(3, 80);
  SeededRng rng(1);
  std::vector<LabeledBatch> none;
  CHECK_THROWS_AS(evaluate_objective({}, sc.q, sc.history, kPrior, none, rng), ContractError);
  auto empty_current = sc.batches;
  empty_current[0] = LabeledBatch{};
  CHECK_THROWS_AS(evaluate_objective({}, sc.q, sc.history, kPrior, empty_current, rng), ContractError);

  // Capacity one: q_{t-2} has been evicted, so a two-step objective cannot run.
  PosteriorHistory short_history(1);
  short_history.push(sc.history.find(1)->posterior(), 1);
  short_history.push(sc.history.find(2)->posterior(), 2);
  CHECK_THROWS_AS(evaluate_objective({ObjectiveKind::NStepKL, 2, 0.0, 1.0, 1}, sc.q, short_history,
                                     kPrior, sc.batches, rng),
                  ContractError);
  CHECK_THROWS_AS(td_target(4, sc.q, sc.history, kPrior, sc.batches, 1, rng), ContractError);
  CHECK_THROWS_AS(td_target(0, sc.q, sc.history, kPrior, sc.batches, 1, rng), ContractError);
  CHECK_THROWS_AS(evaluate_objective({ObjectiveKind::VCL, 1, 0.0, -1.0, 1}, sc.q, sc.history, kPrior,
                                     sc.batches, rng),
                  ContractError);
  CHECK_THROWS_AS(evaluate_objective({ObjectiveKind::VCL, 1, 0.0, 1.0, 0}, sc.q, sc.history, kPrior,
                                     sc.batches, rng),
                  ContractError);
}
