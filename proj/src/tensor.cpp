#include "tdvcl/tensor.hpp"

#include "tdvcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <new>
#include <numeric>
#include <sstream>

// Every heap block starts on a 64-byte boundary. Eigen peels unaligned
// heads off vectorized kernels in scalar code, so with malloc's 16-byte
// alignment the rounding of a reduction depended on where the buffer landed.
void* operator new(std::size_t n) {
  const std::size_t rounded = n == 0 ? 64 : (n + 63) / 64 * 64;
  if (void* p = std::aligned_alloc(64, rounded)) return p;
  throw std::bad_alloc();
}
void operator delete(void* p) noexcept { std::free(p); }
void operator delete(void* p, std::size_t) noexcept { std::free(p); }

namespace tdvcl {
namespace {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  if (shape.empty() || shape.size() > 2) {
    throw DimensionError("tensor rank must be 1 or 2");
  }
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("tensor dimensions must be positive");
  }
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (element_count(shape_) != data_.size()) {
    throw DimensionError("data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_string());
  }
}

Tensor Tensor::vector(std::vector<double> values) {
  std::size_t n = values.size();
  return Tensor({n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
  return Tensor({rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> values;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& row : rows) {
    if (row.size() != cols) throw DimensionError("ragged matrix literal");
    values.insert(values.end(), row.begin(), row.end());
  }
  return Tensor({rows.size(), cols}, std::move(values));
}

Tensor Tensor::from(const Eigen::Ref<const RowMatrix>& m) {
  Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  t.matrix() = m;
  return t;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ContractError("item() on non-scalar tensor " + shape_string());
  return data_[0];
}

MatrixMap Tensor::matrix() noexcept {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

ConstMatrixMap Tensor::matrix() const noexcept {
  return {data_.data(), static_cast<Eigen::Index>(rows()), static_cast<Eigen::Index>(cols())};
}

VectorMap Tensor::flat() noexcept { return {data_.data(), static_cast<Eigen::Index>(data_.size())}; }

ConstVectorMap Tensor::flat() const noexcept {
  return {data_.data(), static_cast<Eigen::Index>(data_.size())};
}

bool Tensor::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Tensor::shape_string() const {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape_.size(); ++i) os << (i ? "x" : "") << shape_[i];
  os << ']';
  return os.str();
}

Tensor affine(const Tensor& weights, const Tensor& bias, const Tensor& input) {
  if (weights.rank() != 2 || bias.rank() != 1 || input.rank() != 1 ||
      weights.cols() != input.size() || weights.rows() != bias.size()) {
    throw DimensionError("affine: W" + weights.shape_string() + " b" + bias.shape_string() +
                         " x" + input.shape_string());
  }
  Tensor out({weights.rows()});
  const Eigen::VectorXd y = RowMatrix(weights.matrix()) * Eigen::VectorXd(input.flat());
  out.flat() = y + bias.flat();
  return out;
}

SoftmaxXent softmax_xent(const Tensor& logits, std::size_t label) {
  if (logits.size() < 2) throw ContractError("softmax_xent: need at least two classes");
  if (label >= logits.size()) throw ContractError("softmax_xent: label out of range");
  if (!logits.all_finite()) throw NumericError("softmax_xent: non-finite logits");

  const double peak = *std::max_element(logits.data().begin(), logits.data().end());
  Tensor probs({logits.size()});
  double z = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    probs[c] = std::exp(logits[c] - peak);
    z += probs[c];
  }
  for (double& p : probs.data()) p /= z;
  const double loss = std::log(z) - (logits[label] - peak);
  return {loss, std::move(probs)};
}

}  // namespace tdvcl
