#include "tdvcl/vardist.hpp"

#include "tdvcl/errors.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

namespace tdvcl {

double GaussianPrior::stddev() const {
  if (!(variance > 0.0)) throw ContractError("prior variance must be positive");
  return std::sqrt(variance);
}

MeanFieldGaussian::MeanFieldGaussian(LayerSpec layers, std::vector<double> mu,
                                     std::vector<double> rho)
    : layers_(std::move(layers)), mu_(std::move(mu)), rho_(std::move(rho)) {
  if (mu_.size() != rho_.size()) throw DimensionError("mean-field: mu and rho lengths differ");
  if (mu_.size() != layers_.parameter_count()) {
    throw DimensionError("mean-field: vector length does not match layer spec");
  }
}

std::vector<double> MeanFieldGaussian::stddev() const {
  std::vector<double> sd(rho_.size());
  for (std::size_t k = 0; k < rho_.size(); ++k) sd[k] = softplus(rho_[k]);
  return sd;
}

MeanFieldGaussian MeanFieldGaussian::from_prior(const LayerSpec& layers,
                                                const GaussianPrior& prior) {
  const std::size_t n = layers.parameter_count();
  return {layers, std::vector<double>(n, 0.0),
          std::vector<double>(n, inverse_softplus(prior.stddev()))};
}

MeanFieldGaussian init_from_prior(const LayerSpec& layers, const GaussianPrior& prior,
                                  SeededRng& rng) {
  if (layers.layer_count() == 0) throw ContractError("init_from_prior: empty layer spec");
  const double sd = prior.stddev();
  MeanFieldGaussian q = MeanFieldGaussian::from_prior(layers, prior);
  for (double& m : q.mu()) m = sd * rng.normal();
  return q;
}

LivePosterior LivePosterior::record(Tape& tape, const MeanFieldGaussian& q) {
  Var mu = tape.variable(Tensor::vector({q.mu().begin(), q.mu().end()}));
  Var rho = tape.variable(Tensor::vector({q.rho().begin(), q.rho().end()}));
  return {mu, rho, q.layers()};
}

std::vector<double> draw_noise(std::size_t n, SeededRng& rng) {
  std::vector<double> eps(n);
  for (double& e : eps) e = rng.normal();
  return eps;
}

Var sample(const LivePosterior& q, std::span<const double> eps) {
  if (eps.size() != q.mu.value().size()) throw DimensionError("sample: noise length mismatch");
  Tape& tape = *q.mu.tape;
  Var noise = tape.constant(Tensor::vector({eps.begin(), eps.end()}));
  return q.mu + ad::softplus(q.rho) * noise;
}

Var sample(const LivePosterior& q, SeededRng& rng) {
  return sample(q, draw_noise(q.mu.value().size(), rng));
}

std::vector<double> sample(const MeanFieldGaussian& q, SeededRng& rng) {
  std::vector<double> theta(q.size());
  for (std::size_t k = 0; k < q.size(); ++k) {
    theta[k] = q.mu()[k] + softplus(q.rho()[k]) * rng.normal();
  }
  return theta;
}

namespace {

double kl_terms(std::span<const double> mq, std::span<const double> rq,
                std::span<const double> mp, auto&& sd_p) {
  if (mq.size() != mp.size()) throw ContractError("kl_diag: dimension mismatch");
  double kl = 0.0;
  for (std::size_t k = 0; k < mq.size(); ++k) {
    const double sq = softplus(rq[k]);
    const double sp = sd_p(k);
    const double d = mq[k] - mp[k];
    const double log_sq = rq[k] < -30.0 ? rq[k] : std::log(sq);
    kl += std::log(sp) - log_sq + (sq * sq + d * d) / (2.0 * sp * sp) - 0.5;
  }
  return kl;
}

}  // namespace

double kl_diag(const MeanFieldGaussian& q, const MeanFieldGaussian& p) {
  if (q.size() != p.size()) throw ContractError("kl_diag: dimension mismatch");
  return kl_terms(q.mu(), q.rho(), p.mu(), [&](std::size_t k) { return softplus(p.rho()[k]); });
}

double kl_diag(const MeanFieldGaussian& q, const GaussianPrior& p) {
  const double sp = p.stddev();
  const std::vector<double> zeros(q.size(), 0.0);
  return kl_terms(q.mu(), q.rho(), zeros, [sp](std::size_t) { return sp; });
}

double kl_diag(std::span<const double> mu_q, std::span<const double> sd_q,
               std::span<const double> mu_p, std::span<const double> sd_p) {
  if (mu_q.size() != sd_q.size() || mu_q.size() != mu_p.size() || mu_q.size() != sd_p.size()) {
    throw ContractError("kl_diag: dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < mu_q.size(); ++k) {
    const double d = mu_q[k] - mu_p[k];
    kl += std::log(sd_p[k]) - std::log(sd_q[k]) + (sd_q[k] * sd_q[k] + d * d) / (2.0 * sd_p[k] * sd_p[k]) - 0.5;
  }
  return kl;
}

PosteriorSnapshot::PosteriorSnapshot(MeanFieldGaussian posterior, int task_index)
    : posterior_(std::move(posterior)), task_index_(task_index), stddev_(posterior_.stddev()) {}

PosteriorHistory::PosteriorHistory(std::size_t capacity) : capacity_(capacity) {
  if (capacity_ == 0) throw ContractError("posterior history capacity must be positive");
}

void PosteriorHistory::push(const MeanFieldGaussian& q, int task_index) {
  if (!slots_.empty() && task_index <= slots_.front()->task_index()) {
    throw ContractError("push_snapshot: task index " + std::to_string(task_index) +
                        " is not newer than " + std::to_string(slots_.front()->task_index()));
  }
  slots_.push_front(std::make_shared<const PosteriorSnapshot>(q, task_index));
  if (slots_.size() > capacity_) slots_.pop_back();
}

const PosteriorSnapshot* PosteriorHistory::find(int task_index) const {
  for (const auto& s : slots_) {
    if (s->task_index() == task_index) return s.get();
  }
  return nullptr;
}

int PosteriorHistory::current_task() const noexcept {
  return slots_.empty() ? 1 : slots_.front()->task_index() + 1;
}

namespace {

constexpr char kSnapshotMagic[4] = {'T', 'D', 'V', 'S'};
constexpr std::uint32_t kSnapshotVersion = 1;

template <typename T>
void put_le(std::ostream& out, T value) {
  auto bits = std::bit_cast<std::array<unsigned char, sizeof(T)>>(value);
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  out.write(reinterpret_cast<const char*>(bits.data()), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bits{};
  if (!in.read(reinterpret_cast<char*>(bits.data()), sizeof(T))) {
    throw IoError("snapshot: truncated stream");
  }
  if constexpr (std::endian::native == std::endian::big) std::reverse(bits.begin(), bits.end());
  return std::bit_cast<T>(bits);
}

}  // namespace

void write_snapshot(std::ostream& out, const PosteriorSnapshot& snapshot) {
  const MeanFieldGaussian& q = snapshot.posterior();
  out.write(kSnapshotMagic, 4);
  put_le<std::uint32_t>(out, kSnapshotVersion);
  put_le<std::int64_t>(out, snapshot.task_index());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(q.layers().sizes().size()));
  for (std::size_t s : q.layers().sizes()) put_le<std::uint64_t>(out, s);
  put_le<std::uint64_t>(out, q.size());
  for (double v : q.mu()) put_le<double>(out, v);
  for (double v : q.rho()) put_le<double>(out, v);
  if (!out) throw IoError("snapshot: write failed");
}

PosteriorSnapshot read_snapshot(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4)) throw IoError("snapshot: truncated stream");
  if (std::memcmp(magic, kSnapshotMagic, 4) != 0) throw FormatError("snapshot: bad magic");
  if (get_le<std::uint32_t>(in) != kSnapshotVersion) throw FormatError("snapshot: unknown version");
  const auto task_index = static_cast<int>(get_le<std::int64_t>(in));
  const auto layer_count = get_le<std::uint32_t>(in);
  std::vector<std::size_t> sizes(layer_count);
  for (auto& s : sizes) s = get_le<std::uint64_t>(in);
  LayerSpec layers(std::move(sizes));
  const auto count = get_le<std::uint64_t>(in);
  if (count != layers.parameter_count()) throw FormatError("snapshot: parameter count mismatch");
  std::vector<double> mu(count), rho(count);
  for (double& v : mu) v = get_le<double>(in);
  for (double& v : rho) v = get_le<double>(in);
  return {MeanFieldGaussian(std::move(layers), std::move(mu), std::move(rho)), task_index};
}

void save_snapshot(const std::string& path, const PosteriorSnapshot& snapshot) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_snapshot(out, snapshot);
}

PosteriorSnapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_snapshot(in);
}

}  // namespace tdvcl
