#pragma once

#include "tdvcl/autodiff.hpp"
#include "tdvcl/network.hpp"
#include "tdvcl/rng.hpp"

#include <cstddef>
#include <cstdint>
#include <deque>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace tdvcl {

/// Isotropic zero-mean Gaussian prior N(0, variance * I).
struct GaussianPrior {
  double variance = 1.0;

  double stddev() const;
};

/// Diagonal Gaussian over every network parameter; sd = softplus(rho).
class MeanFieldGaussian {
 public:
  MeanFieldGaussian() = default;
  MeanFieldGaussian(LayerSpec layers, std::vector<double> mu, std::vector<double> rho);

  const LayerSpec& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return mu_.size(); }

  std::span<const double> mu() const noexcept { return mu_; }
  std::span<const double> rho() const noexcept { return rho_; }
  std::span<double> mu() noexcept { return mu_; }
  std::span<double> rho() noexcept { return rho_; }
  std::vector<double> stddev() const;

  /// The prior viewed as a mean-field Gaussian over `layers`.
  static MeanFieldGaussian from_prior(const LayerSpec& layers, const GaussianPrior& prior);

  friend bool operator==(const MeanFieldGaussian&, const MeanFieldGaussian&) = default;

 private:
  LayerSpec layers_;
  std::vector<double> mu_;
  std::vector<double> rho_;
};

/// mu ~ N(0, prior variance) i.i.d., softplus(rho) = prior sd.
MeanFieldGaussian init_from_prior(const LayerSpec& layers, const GaussianPrior& prior,
                                  SeededRng& rng);

/// Tape handles for a posterior being optimised.
struct LivePosterior {
  Var mu;
  Var rho;
  LayerSpec layers;

  static LivePosterior record(Tape& tape, const MeanFieldGaussian& q);
};

/// Reparametrised draw theta = mu + softplus(rho) * eps with caller-supplied
/// eps; gradients reach mu and rho.
Var sample(const LivePosterior& q, std::span<const double> eps);
/// Same, drawing eps ~ N(0, I) from `rng`.
Var sample(const LivePosterior& q, SeededRng& rng);
/// Tape-free draw.
std::vector<double> sample(const MeanFieldGaussian& q, SeededRng& rng);

/// Standard-normal noise vector of length n.
std::vector<double> draw_noise(std::size_t n, SeededRng& rng);

/// Closed-form KL(q || p) between diagonal Gaussians.
double kl_diag(const MeanFieldGaussian& q, const MeanFieldGaussian& p);
double kl_diag(const MeanFieldGaussian& q, const GaussianPrior& p);
/// Same closed form on raw means and standard deviations.
double kl_diag(std::span<const double> mu_q, std::span<const double> sd_q,
               std::span<const double> mu_p, std::span<const double> sd_p);

/// Frozen copy of a posterior taken at the end of task `task_index`.
class PosteriorSnapshot {
 public:
  PosteriorSnapshot(MeanFieldGaussian posterior, int task_index);

  const MeanFieldGaussian& posterior() const noexcept { return posterior_; }
  int task_index() const noexcept { return task_index_; }
  /// Cached softplus(rho), used as a KL anchor.
  std::span<const double> stddev() const noexcept { return stddev_; }

 private:
  MeanFieldGaussian posterior_;
  int task_index_;
  std::vector<double> stddev_;
};

/// The most recent posterior snapshots, newest first (slot 0 is q_{t-1}).
class PosteriorHistory {
 public:
  explicit PosteriorHistory(std::size_t capacity);

  /// Deep-copies q. task_index must exceed every stored index.
  void push(const MeanFieldGaussian& q, int task_index);

  std::size_t size() const noexcept { return slots_.size(); }
  std::size_t capacity() const noexcept { return capacity_; }
  bool empty() const noexcept { return slots_.empty(); }
  const PosteriorSnapshot& operator[](std::size_t slot) const { return *slots_.at(slot); }
  /// Snapshot frozen after task `task_index`, or nullptr.
  const PosteriorSnapshot* find(int task_index) const;
  /// Index of the task currently being learned: newest stored index + 1.
  int current_task() const noexcept;

 private:
  std::size_t capacity_;
  std::deque<std::shared_ptr<const PosteriorSnapshot>> slots_;
};

/// Binary snapshot layout (all little-endian):
///   char[4]  magic "TDVS"
///   u32      version (1)
///   i64      task_index
///   u32      L = number of layer sizes
///   u64[L]   layer sizes
///   u64      P = parameter count
///   f64[P]   mu
///   f64[P]   rho
void write_snapshot(std::ostream& out, const PosteriorSnapshot& snapshot);
PosteriorSnapshot read_snapshot(std::istream& in);
void save_snapshot(const std::string& path, const PosteriorSnapshot& snapshot);
PosteriorSnapshot load_snapshot(const std::string& path);

}  // namespace tdvcl
