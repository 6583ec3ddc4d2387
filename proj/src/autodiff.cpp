#include "tdvcl/autodiff.hpp"

#include "tdvcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace tdvcl {

const Tensor& Var::value() const { return tape->value(id); }
const Tensor& Var::grad() const { return tape->grad(id); }

Var Tape::variable(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, true, false});
  return {this, nodes_.size() - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, {}, false, false});
  return {this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, Backprop backprop) {
  return record(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()),
                std::move(backprop));
}

Var Tape::record(Tensor value, std::span<const Var> inputs, Backprop backprop) {
  bool needs = false;
  for (const Var& in : inputs) {
    if (in.tape != this) throw ContractError("tape: input recorded on a different tape");
    needs = needs || nodes_[in.id].needs_grad;
  }
  nodes_.push_back(Node{std::move(value), {}, needs ? std::move(backprop) : Backprop{}, needs,
                        false});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::adjoint(std::size_t id) {
  Node& node = nodes_[id];
  if (!node.has_grad) {
    node.grad = Tensor(node.value.shape(), 0.0);
    node.has_grad = true;
  }
  return node.grad;
}

const Tensor& Tape::grad(std::size_t id) const {
  const Node& node = nodes_[id];
  if (node.has_grad) return node.grad;
  if (zero_.shape() != node.value.shape()) zero_ = Tensor(node.value.shape(), 0.0);
  return zero_;
}

void Tape::backward(Var loss) {
  if (loss.tape != this) throw ContractError("backward: loss recorded on a different tape");
  if (nodes_[loss.id].value.size() != 1) {
    throw ContractError("backward: loss must be scalar, got " +
                        nodes_[loss.id].value.shape_string());
  }
  for (Node& node : nodes_) {
    node.has_grad = false;
    node.grad = Tensor();
  }
  adjoint(loss.id)[0] = 1.0;
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (!node.has_grad || !node.backprop) continue;
    node.backprop(*this, node.grad);
  }
}

double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double inverse_softplus(double sd) {
  if (!(sd > 0.0)) throw ContractError("inverse_softplus: sd must be positive");
  return sd > 30.0 ? sd + std::log(-std::expm1(-sd)) : std::log(std::expm1(sd));
}

namespace ad {
namespace {

void require_same_shape(Var a, Var b, const char* op) {
  if (a.value().shape() != b.value().shape()) {
    throw DimensionError(std::string(op) + ": shape " + a.value().shape_string() + " vs " +
                         b.value().shape_string());
  }
}

// log(softplus(x)) without underflow for very negative x.
double log_softplus(double x) { return x < -30.0 ? x : std::log(tdvcl::softplus(x)); }

}  // namespace

Var linear(Var x, Var weights, Var bias) {
  const Tensor& X = x.value();
  const Tensor& W = weights.value();
  const Tensor& b = bias.value();
  if (W.rank() != 2 || b.rank() != 1 || X.cols() != W.cols() || W.rows() != b.size()) {
    throw DimensionError("linear: X" + X.shape_string() + " W" + W.shape_string() + " b" +
                         b.shape_string());
  }
  // Products read and write owned (aligned) matrices only. Eigen peels
  // unaligned edges into scalar code that rounds differently from its FMA
  // packets, which would make results depend on heap addresses.
  RowMatrix product = RowMatrix(X.matrix()) * RowMatrix(W.matrix()).transpose();
  product.rowwise() += b.flat().transpose();
  Tensor out = Tensor::from(product);
  const std::size_t xi = x.id, wi = weights.id, bi = bias.id;
  return x.tape->record(std::move(out), {x, weights, bias}, [xi, wi, bi](Tape& t, const Tensor& g) {
    const RowMatrix G = g.matrix();
    if (t.needs_grad(xi)) {
      const RowMatrix dx = G * RowMatrix(t.value(wi).matrix());
      t.adjoint(xi).matrix() += dx;
    }
    if (t.needs_grad(wi)) {
      const RowMatrix dw = G.transpose() * RowMatrix(t.value(xi).matrix());
      t.adjoint(wi).matrix() += dw;
    }
    if (t.needs_grad(bi)) t.adjoint(bi).flat() += G.colwise().sum().transpose();
  });
}

Var affine(Var weights, Var bias, Var x) {
  if (x.value().rank() != 1) throw DimensionError("affine: input must be a vector");
  const Tensor& W = weights.value();
  if (W.rank() != 2 || W.cols() != x.value().size() || W.rows() != bias.value().size() ||
      bias.value().rank() != 1) {
    throw DimensionError("affine: W" + W.shape_string() + " b" + bias.value().shape_string() +
                         " x" + x.value().shape_string());
  }
  Var row = linear(x, weights, bias);
  return slice(row, 0, {W.rows()});
}

Var relu(Var x) {
  Tensor out = x.value();
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  const std::size_t xi = x.id;
  return x.tape->record(std::move(out), {x}, [xi](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(xi);
    Tensor& a = t.adjoint(xi);
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (in[k] > 0.0) a[k] += g[k];
    }
  });
}

Var add(Var a, Var b) {
  require_same_shape(a, b, "add");
  Tensor out = a.value();
  out.flat() += b.value().flat();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    if (t.needs_grad(ai)) t.adjoint(ai).flat() += g.flat();
    if (t.needs_grad(bi)) t.adjoint(bi).flat() += g.flat();
  });
}

Var sub(Var a, Var b) {
  require_same_shape(a, b, "sub");
  Tensor out = a.value();
  out.flat() -= b.value().flat();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    if (t.needs_grad(ai)) t.adjoint(ai).flat() += g.flat();
    if (t.needs_grad(bi)) t.adjoint(bi).flat() -= g.flat();
  });
}

Var mul(Var a, Var b) {
  require_same_shape(a, b, "mul");
  Tensor out = a.value();
  out.flat().array() *= b.value().flat().array();
  const std::size_t ai = a.id, bi = b.id;
  return a.tape->record(std::move(out), {a, b}, [ai, bi](Tape& t, const Tensor& g) {
    if (t.needs_grad(ai)) t.adjoint(ai).flat().array() += g.flat().array() * t.value(bi).flat().array();
    if (t.needs_grad(bi)) t.adjoint(bi).flat().array() += g.flat().array() * t.value(ai).flat().array();
  });
}

Var scale(Var a, double factor) {
  Tensor out = a.value();
  out.flat() *= factor;
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai, factor](Tape& t, const Tensor& g) {
    t.adjoint(ai).flat() += factor * g.flat();
  });
}

Var square(Var a) {
  Tensor out = a.value();
  out.flat() = out.flat().array().square().matrix();
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, const Tensor& g) {
    t.adjoint(ai).flat().array() += 2.0 * g.flat().array() * t.value(ai).flat().array();
  });
}

Var softplus(Var a) {
  Tensor out = a.value();
  for (double& v : out.data()) v = tdvcl::softplus(v);
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, const Tensor& g) {
    const Tensor& in = t.value(ai);
    Tensor& adj = t.adjoint(ai);
    for (std::size_t k = 0; k < g.size(); ++k) adj[k] += g[k] * sigmoid(in[k]);
  });
}

Var sum(Var a) {
  const auto values = a.value().data();
  Tensor out = Tensor::scalar(std::accumulate(values.begin(), values.end(), 0.0));
  const std::size_t ai = a.id;
  return a.tape->record(std::move(out), {a}, [ai](Tape& t, const Tensor& g) {
    t.adjoint(ai).flat().array() += g[0];
  });
}

Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights) {
  if (scalars.empty() || scalars.size() != weights.size()) {
    throw ContractError("weighted_sum: need matching, non-empty term and weight lists");
  }
  double total = 0.0;
  std::vector<std::size_t> ids;
  for (std::size_t k = 0; k < scalars.size(); ++k) {
    if (scalars[k].value().size() != 1) throw DimensionError("weighted_sum: terms must be scalar");
    total += weights[k] * scalars[k].item();
    ids.push_back(scalars[k].id);
  }
  std::vector<double> w(weights.begin(), weights.end());
  return scalars.front().tape->record(
      Tensor::scalar(total), scalars, [ids = std::move(ids), w = std::move(w)](Tape& t, const Tensor& g) {
        for (std::size_t k = 0; k < ids.size(); ++k) {
          if (t.needs_grad(ids[k])) t.adjoint(ids[k])[0] += w[k] * g[0];
        }
      });
}

Var slice(Var flat, std::size_t offset, std::vector<std::size_t> shape) {
  const Tensor& src = flat.value();
  Tensor out(std::move(shape));
  if (offset + out.size() > src.size()) throw DimensionError("slice: range exceeds source");
  std::copy_n(src.data().begin() + static_cast<std::ptrdiff_t>(offset), out.size(),
              out.data().begin());
  const std::size_t fi = flat.id;
  return flat.tape->record(std::move(out), {flat}, [fi, offset](Tape& t, const Tensor& g) {
    Tensor& adj = t.adjoint(fi);
    for (std::size_t k = 0; k < g.size(); ++k) adj[offset + k] += g[k];
  });
}

Var columns(Var m, std::size_t begin, std::size_t count) {
  const Tensor& src = m.value();
  if (src.rank() != 2 || count == 0 || begin + count > src.cols()) {
    throw DimensionError("columns: range exceeds matrix " + src.shape_string());
  }
  Tensor out = Tensor::from(src.matrix().middleCols(static_cast<Eigen::Index>(begin),
                                                    static_cast<Eigen::Index>(count)));
  const std::size_t mi = m.id;
  return m.tape->record(std::move(out), {m}, [mi, begin, count](Tape& t, const Tensor& g) {
    t.adjoint(mi).matrix().middleCols(static_cast<Eigen::Index>(begin),
                                      static_cast<Eigen::Index>(count)) += g.matrix();
  });
}

Var mean_softmax_xent(Var logits, std::span<const int> labels) {
  const Tensor& z = logits.value();
  if (z.rank() != 2 || z.rows() != labels.size()) {
    throw DimensionError("mean_softmax_xent: logits " + z.shape_string() + " for " +
                         std::to_string(labels.size()) + " labels");
  }
  if (z.cols() < 2) throw ContractError("mean_softmax_xent: need at least two classes");
  if (!z.all_finite()) throw NumericError("mean_softmax_xent: non-finite logits");
  const std::size_t n = z.rows(), c = z.cols();
  Tensor probs({n, c});
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const auto label = static_cast<std::size_t>(labels[r]);
    if (labels[r] < 0 || label >= c) throw ContractError("mean_softmax_xent: label out of range");
    double peak = z.at(r, 0);
    for (std::size_t k = 1; k < c; ++k) peak = std::max(peak, z.at(r, k));
    double total = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      probs.at(r, k) = std::exp(z.at(r, k) - peak);
      total += probs.at(r, k);
    }
    for (std::size_t k = 0; k < c; ++k) probs.at(r, k) /= total;
    loss += std::log(total) - (z.at(r, label) - peak);
  }
  loss /= static_cast<double>(n);
  std::vector<int> saved(labels.begin(), labels.end());
  const std::size_t li = logits.id;
  return logits.tape->record(
      Tensor::scalar(loss), {logits},
      [li, probs = std::move(probs), saved = std::move(saved)](Tape& t, const Tensor& g) {
        Tensor& adj = t.adjoint(li);
        const double s = g[0] / static_cast<double>(saved.size());
        const std::size_t c = probs.cols();
        for (std::size_t r = 0; r < saved.size(); ++r) {
          for (std::size_t k = 0; k < c; ++k) adj.at(r, k) += s * probs.at(r, k);
          adj.at(r, static_cast<std::size_t>(saved[r])) -= s;
        }
      });
}

Var kl_to_fixed(Var mu, Var rho, std::span<const double> anchor_mu,
                std::span<const double> anchor_sd) {
  const Tensor& m = mu.value();
  const Tensor& r = rho.value();
  if (m.size() != r.size() || m.size() != anchor_mu.size() || m.size() != anchor_sd.size()) {
    throw DimensionError("kl_to_fixed: dimension mismatch");
  }
  double kl = 0.0;
  for (std::size_t k = 0; k < m.size(); ++k) {
    const double sq = tdvcl::softplus(r[k]);
    const double sa = anchor_sd[k];
    const double d = m[k] - anchor_mu[k];
    kl += std::log(sa) - log_softplus(r[k]) + (sq * sq + d * d) / (2.0 * sa * sa) - 0.5;
  }
  std::vector<double> am(anchor_mu.begin(), anchor_mu.end());
  std::vector<double> as(anchor_sd.begin(), anchor_sd.end());
  const std::size_t mi = mu.id, ri = rho.id;
  return mu.tape->record(
      Tensor::scalar(kl), {mu, rho},
      [mi, ri, am = std::move(am), as = std::move(as)](Tape& t, const Tensor& g) {
        const Tensor& m = t.value(mi);
        const Tensor& r = t.value(ri);
        if (t.needs_grad(mi)) {
          Tensor& adj = t.adjoint(mi);
          for (std::size_t k = 0; k < m.size(); ++k) adj[k] += g[0] * (m[k] - am[k]) / (as[k] * as[k]);
        }
        if (t.needs_grad(ri)) {
          Tensor& adj = t.adjoint(ri);
          for (std::size_t k = 0; k < r.size(); ++k) {
            const double sq = tdvcl::softplus(r[k]);
            // sigmoid(r) / softplus(r) -> 1 as r -> -inf.
            const double inv_ratio = r[k] < -30.0 ? 1.0 : sigmoid(r[k]) / sq;
            adj[k] += g[0] * (-inv_ratio + sq * sigmoid(r[k]) / (as[k] * as[k]));
          }
        }
      });
}

}  // namespace ad
}  // namespace tdvcl
