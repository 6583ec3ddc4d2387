#pragma once

#include "tdvcl/tensor.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace tdvcl {

class Tape;

/// Handle to a node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  double item() const { return value().item(); }
};

/// Reverse-mode differentiation record.
///
/// Nodes are appended in evaluation order; `backward` seeds the scalar loss
/// with 1 and visits nodes in exact reverse order of recording. Nodes that do
/// not depend on any variable leaf carry no gradient and are skipped.
class Tape {
 public:
  // Receives the adjoint of the node being processed.
  using Backprop = std::function<void(Tape&, const Tensor&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf whose gradient is wanted.
  Var variable(Tensor value);
  /// Leaf treated as data.
  Var constant(Tensor value);

  /// Appends an operation node. `inputs` decide whether the node needs a
  /// gradient; `backprop` is dropped when none of them do.
  Var record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop);
  Var record(Tensor value, std::span<const Var> inputs, Backprop backprop);

  void backward(Var loss);

  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  /// Gradient after backward(); a zero tensor if the node was not reached.
  const Tensor& grad(std::size_t id) const;
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  /// Mutable, zero-initialised adjoint buffer used by backprop closures.
  Tensor& adjoint(std::size_t id);

  std::size_t size() const noexcept { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    Backprop backprop;
    bool needs_grad = false;
    bool has_grad = false;
  };

  std::vector<Node> nodes_;
  mutable Tensor zero_;
};

namespace ad {

/// X W^T + b for a batch X [N x k], W [m x k], b [m] -> [N x m].
Var linear(Var x, Var weights, Var bias);
/// W x + b for a single input; shapes as in tdvcl::affine.
Var affine(Var weights, Var bias, Var x);
Var relu(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var square(Var a);
Var softplus(Var a);
/// Sum of all entries, as a scalar.
Var sum(Var a);
/// Σ_k c_k s_k over scalar nodes.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);

/// Contiguous slice of a flat tensor, reshaped to `shape`.
Var slice(Var flat, std::size_t offset, std::vector<std::size_t> shape);
/// Columns [begin, begin + count) of a matrix.
Var columns(Var m, std::size_t begin, std::size_t count);

/// Mean over rows of -log softmax(logits)[label]. Logits are [N x C].
Var mean_softmax_xent(Var logits, std::span<const int> labels);

/// Σ_i KL(N(mu_i, softplus(rho_i)^2) || N(anchor_mu_i, anchor_sd_i^2)) for a
/// fixed anchor. The anchor is data; gradients flow to mu and rho.
Var kl_to_fixed(Var mu, Var rho, std::span<const double> anchor_mu,
                std::span<const double> anchor_sd);

}  // namespace ad

inline Var operator+(Var a, Var b) { return ad::add(a, b); }
inline Var operator-(Var a, Var b) { return ad::sub(a, b); }
inline Var operator*(Var a, Var b) { return ad::mul(a, b); }
inline Var operator*(double c, Var a) { return ad::scale(a, c); }

double softplus(double x);
double sigmoid(double x);
/// rho with softplus(rho) == sd; sd must be positive.
double inverse_softplus(double sd);

}  // namespace tdvcl
