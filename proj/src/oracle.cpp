#include "tdvcl/oracle.hpp"

#include "tdvcl/errors.hpp"
#include "tdvcl/objectives.hpp"

#include <charconv>
#include <cmath>
#include <ostream>

namespace tdvcl {

namespace {

Eigen::LLT<Eigen::MatrixXd> spd_factor(const Eigen::MatrixXd& m, const char* what) {
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericError(std::string(what) + ": matrix is not positive definite");
  return llt;
}

Eigen::MatrixXd spd_inverse(const Eigen::MatrixXd& m, const char* what) {
  auto llt = spd_factor(m, what);
  Eigen::MatrixXd inv = llt.solve(Eigen::MatrixXd::Identity(m.rows(), m.cols()));
  return 0.5 * (inv + inv.transpose());
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
}

}  // namespace

void ConjugateGaussianPosterior::validate() const {
  if (cov.rows() != mean.size() || cov.cols() != mean.size()) {
    throw DimensionError("conjugate posterior: covariance does not match mean");
  }
  if (!cov.isApprox(cov.transpose(), 1e-12)) throw NumericError("conjugate posterior: covariance not symmetric");
  spd_factor(cov, "conjugate posterior");
}

ConjugateGaussianPosterior ConjugateGaussianPosterior::diagonal(Eigen::VectorXd mean,
                                                                const Eigen::VectorXd& variances) {
  if (variances.size() != mean.size()) throw DimensionError("conjugate posterior: variance length mismatch");
  return {std::move(mean), variances.asDiagonal().toDenseMatrix()};
}

ConjugateGaussianPosterior exact_update(const ConjugateGaussianPosterior& prior, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y, double noise_var) {
  if (!(noise_var > 0.0)) throw ContractError("exact_update: noise variance must be positive");
  if (X.rows() != y.size() || (X.rows() > 0 && X.cols() != prior.mean.size())) {
    throw DimensionError("exact_update: design matrix does not conform");
  }
  if (X.rows() == 0) return prior;
  const Eigen::MatrixXd precision = spd_inverse(prior.cov, "exact_update") + X.transpose() * X / noise_var;
  ConjugateGaussianPosterior out;
  out.cov = spd_inverse(precision, "exact_update");
  out.mean = out.cov * (spd_factor(prior.cov, "exact_update").solve(prior.mean) + X.transpose() * y / noise_var);
  return out;
}

ConjugateStream make_conjugate_stream(const ConjugateStreamOptions& options, SeededRng& rng) {
  if (options.dim < 1 || options.tasks < 1 || options.rows_per_task < 1) {
    throw ContractError("conjugate stream: sizes must be positive");
  }
  if (options.orthogonal && options.rows_per_task < options.dim) {
    throw ContractError("conjugate stream: orthogonal designs need rows_per_task >= dim");
  }
  if (!(options.prior_variance > 0.0) || !(options.noise_var > 0.0)) {
    throw ContractError("conjugate stream: variances must be positive");
  }
  const auto d = static_cast<Eigen::Index>(options.dim);
  const auto m = static_cast<Eigen::Index>(options.rows_per_task);
  auto gaussian = [&](Eigen::Index r, Eigen::Index c) {
    Eigen::MatrixXd a(r, c);
    for (Eigen::Index j = 0; j < c; ++j) {
      for (Eigen::Index i = 0; i < r; ++i) a(i, j) = rng.normal();
    }
    return a;
  };

  ConjugateStream s;
  s.noise_var = options.noise_var;
  s.prior = ConjugateGaussianPosterior::diagonal(Eigen::VectorXd::Zero(d),
                                                 Eigen::VectorXd::Constant(d, options.prior_variance));
  s.true_weights = std::sqrt(options.prior_variance) * gaussian(d, 1).col(0);
  const double noise_sd = std::sqrt(options.noise_var);
  for (std::size_t t = 0; t < options.tasks; ++t) {
    RegressionTask task;
    if (options.orthogonal) {
      // Thin Q from a Householder QR of a Gaussian matrix: Q^T Q = I, so X^T X = diag(scale^2).
      Eigen::HouseholderQR<Eigen::MatrixXd> qr(gaussian(m, d));
      const Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(m, d);
      Eigen::VectorXd scale(d);
      for (Eigen::Index j = 0; j < d; ++j) scale(j) = 0.5 + 1.5 * rng.uniform();
      task.X = q * scale.asDiagonal();
    } else {
      task.X = gaussian(m, d);
    }
    task.y = task.X * s.true_weights + noise_sd * gaussian(m, 1).col(0);
    s.tasks.push_back(std::move(task));
  }
  return s;
}

std::vector<ConjugateGaussianPosterior> exact_trajectory(const ConjugateStream& stream) {
  std::vector<ConjugateGaussianPosterior> out;
  ConjugateGaussianPosterior current = stream.prior;
  for (const auto& task : stream.tasks) {
    current = exact_update(current, task.X, task.y, stream.noise_var);
    out.push_back(current);
  }
  return out;
}

std::string RecursionMode::name() const {
  return kind == Kind::SingleStep ? "single_step" : "n_step(" + std::to_string(n) + ")";
}

std::vector<ConjugateGaussianPosterior> perturbed_recursion(const ConjugateStream& stream, double noise_scale,
                                                            RecursionMode mode, SeededRng& rng) {
  if (!(noise_scale >= 0.0)) throw ContractError("perturbed_recursion: noise scale must be >= 0");
  if (mode.n < 1) throw ContractError("perturbed_recursion: n must be >= 1");
  const Eigen::MatrixXd& prior_cov = stream.prior.cov;
  if (!prior_cov.isApprox(Eigen::MatrixXd(prior_cov.diagonal().asDiagonal()), 0.0)) {
    throw ContractError("perturbed_recursion: prior covariance must be diagonal");
  }
  const auto d = stream.prior.mean.size();
  const int horizon = mode.kind == RecursionMode::Kind::SingleStep ? 1 : mode.n;

  // approx[k] is the approximation after task k; approx[0] is the prior.
  std::vector<ConjugateGaussianPosterior> approx{stream.prior};
  for (std::size_t t = 1; t <= stream.tasks.size(); ++t) {
    const int n_t = std::min<int>(horizon, static_cast<int>(t));
    const CoefficientSchedule w = nstep_coefficients(n_t);

    // Stationary point of Σ w_i E_q[log p(D_{t-i})] - Σ v_i KL(q || q_{t-i-1}) over diagonal q.
    Eigen::MatrixXd lhs = Eigen::MatrixXd::Zero(d, d);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(d);
    Eigen::VectorXd inv_var = Eigen::VectorXd::Zero(d);
    for (int i = 0; i < n_t; ++i) {
      const RegressionTask& task = stream.tasks[t - 1 - static_cast<std::size_t>(i)];
      const Eigen::MatrixXd gram = task.X.transpose() * task.X;
      const double wi = w.likelihood_weights[static_cast<std::size_t>(i)] / stream.noise_var;
      lhs += wi * gram;
      rhs += wi * task.X.transpose() * task.y;
      inv_var += wi * gram.diagonal();

      const ConjugateGaussianPosterior& anchor = approx[t - 1 - static_cast<std::size_t>(i)];
      const Eigen::VectorXd anchor_precision = anchor.cov.diagonal().cwiseInverse();
      const double vi = w.kl_weights[static_cast<std::size_t>(i)];
      lhs.diagonal() += vi * anchor_precision;
      rhs += vi * anchor_precision.cwiseProduct(anchor.mean);
      inv_var += vi * anchor_precision;
    }
    ConjugateGaussianPosterior next;
    next.mean = spd_factor(lhs, "perturbed_recursion").solve(rhs);
    next.cov = inv_var.cwiseInverse().asDiagonal().toDenseMatrix();
    if (noise_scale > 0.0) {
      for (Eigen::Index j = 0; j < d; ++j) next.mean(j) += noise_scale * rng.normal();
    }
    approx.push_back(std::move(next));
  }
  approx.erase(approx.begin());
  return approx;
}

double kl_to_truth(const ConjugateGaussianPosterior& approx, const ConjugateGaussianPosterior& exact) {
  if (approx.dim() != exact.dim() || approx.cov.rows() != exact.cov.rows()) {
    throw DimensionError("kl_to_truth: dimensions differ");
  }
  const auto la = spd_factor(approx.cov, "kl_to_truth");
  const auto lb = spd_factor(exact.cov, "kl_to_truth");
  const Eigen::VectorXd diff = exact.mean - approx.mean;
  const double trace = lb.solve(approx.cov).trace();
  const double quad = diff.dot(lb.solve(diff));
  const double kl = 0.5 * (trace + quad - static_cast<double>(approx.dim()) + log_det(lb) - log_det(la));
  return std::max(kl, 0.0);
}

void write_kl_csv(std::ostream& out, const std::vector<KlTrajectoryRow>& rows) {
  out << "run_id,seed,method,t,task,kl_to_truth\n";
  char buf[64];
  for (const auto& r : rows) {
    auto res = std::to_chars(buf, buf + sizeof buf, r.kl);
    // Method names such as n_step(3) contain no commas.
    out << r.run_id << ',' << r.seed << ',' << r.method << ',' << r.t << ',' << r.t << ','
        << std::string(buf, res.ptr) << '\n';
  }
}

}  // namespace tdvcl
