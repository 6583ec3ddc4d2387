#pragma once

#include "tdvcl/rng.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace tdvcl {

/// Gaussian over regression weights; covariance is symmetric positive definite.
struct ConjugateGaussianPosterior {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  std::size_t dim() const noexcept { return static_cast<std::size_t>(mean.size()); }
  /// DimensionError on shape mismatch, NumericError when cov is not SPD.
  void validate() const;
  static ConjugateGaussianPosterior diagonal(Eigen::VectorXd mean, const Eigen::VectorXd& variances);
};

/// Bayesian linear regression update with Gaussian noise of variance `noise_var`.
ConjugateGaussianPosterior exact_update(const ConjugateGaussianPosterior& prior, const Eigen::MatrixXd& X,
                                        const Eigen::VectorXd& y, double noise_var);

struct RegressionTask {
  Eigen::MatrixXd X;
  Eigen::VectorXd y;
};

struct ConjugateStream {
  ConjugateGaussianPosterior prior;
  double noise_var = 1.0;
  std::vector<RegressionTask> tasks;
  Eigen::VectorXd true_weights;
};

struct ConjugateStreamOptions {
  std::size_t dim = 4;
  std::size_t tasks = 10;
  std::size_t rows_per_task = 8;
  double prior_variance = 1.0;
  double noise_var = 0.25;
  /// Orthogonal designs X = Q diag(d) keep every exact posterior diagonal.
  bool orthogonal = true;
};

ConjugateStream make_conjugate_stream(const ConjugateStreamOptions& options, SeededRng& rng);

/// Exact posteriors after each task, oldest first.
std::vector<ConjugateGaussianPosterior> exact_trajectory(const ConjugateStream& stream);

struct RecursionMode {
  enum class Kind { SingleStep, NStep };
  Kind kind = Kind::SingleStep;
  int n = 1;

  static RecursionMode single_step() { return {Kind::SingleStep, 1}; }
  static RecursionMode n_step(int n) { return {Kind::NStep, n}; }
  std::string name() const;
};

/// Diagonal-Gaussian recursion: each task's approximation maximizes the
/// weighted likelihood minus weighted KL to earlier approximations (the prior
/// standing in for task 0), solved in closed form. After each fit the mean
/// receives N(0, noise_scale^2) noise. The prior covariance must be diagonal.
std::vector<ConjugateGaussianPosterior> perturbed_recursion(const ConjugateStream& stream, double noise_scale,
                                                            RecursionMode mode, SeededRng& rng);

/// KL(approx || exact) between full-covariance Gaussians.
double kl_to_truth(const ConjugateGaussianPosterior& approx, const ConjugateGaussianPosterior& exact);

struct KlTrajectoryRow {
  std::string run_id;
  std::uint64_t seed = 0;
  std::string method;
  int t = 0;
  double kl = 0.0;
};

/// Columns run_id,seed,method,t,task,kl_to_truth (task repeats t).
void write_kl_csv(std::ostream& out, const std::vector<KlTrajectoryRow>& rows);

}  // namespace tdvcl
