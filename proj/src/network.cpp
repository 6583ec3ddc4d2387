#include "tdvcl/network.hpp"

#include "tdvcl/errors.hpp"

namespace tdvcl {

LayerSpec::LayerSpec(std::vector<std::size_t> sizes) : sizes_(std::move(sizes)) {
  if (sizes_.size() < 2) throw ContractError("layer spec needs at least input and output sizes");
  for (std::size_t s : sizes_) {
    if (s == 0) throw ContractError("layer sizes must be positive");
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    offsets_.push_back(parameter_count_);
    parameter_count_ += sizes_[l + 1] * sizes_[l] + sizes_[l + 1];
  }
}

namespace {

void check_head(const LayerSpec& layers, Head head) {
  if (head.classes == 0) head.classes = layers.output_dim();
  if (head.offset + head.classes > layers.output_dim()) {
    throw DimensionError("head exceeds network output width");
  }
}

}  // namespace

Var forward(Var theta, const LayerSpec& layers, Var inputs, Head head) {
  if (theta.value().size() != layers.parameter_count()) {
    throw DimensionError("forward: parameter vector does not match layer spec");
  }
  if (inputs.value().cols() != layers.input_dim()) {
    throw DimensionError("forward: input width " + std::to_string(inputs.value().cols()) +
                         " vs " + std::to_string(layers.input_dim()));
  }
  check_head(layers, head);
  const auto& sizes = layers.sizes();
  Var h = inputs;
  for (std::size_t l = 0; l < layers.layer_count(); ++l) {
    Var w = ad::slice(theta, layers.weight_offset(l), {sizes[l + 1], sizes[l]});
    Var b = ad::slice(theta, layers.bias_offset(l), {sizes[l + 1]});
    h = ad::linear(h, w, b);
    if (l + 1 < layers.layer_count()) h = ad::relu(h);
  }
  const std::size_t classes = head.classes ? head.classes : layers.output_dim();
  if (head.offset == 0 && classes == layers.output_dim()) return h;
  return ad::columns(h, head.offset, classes);
}

Tensor forward(std::span<const double> theta, const LayerSpec& layers, const Tensor& inputs,
               Head head) {
  if (theta.size() != layers.parameter_count()) {
    throw DimensionError("forward: parameter vector does not match layer spec");
  }
  if (inputs.cols() != layers.input_dim()) throw DimensionError("forward: input width mismatch");
  check_head(layers, head);
  const auto& sizes = layers.sizes();
  RowMatrix h = inputs.matrix();
  for (std::size_t l = 0; l < layers.layer_count(); ++l) {
    const auto out = static_cast<Eigen::Index>(sizes[l + 1]);
    const auto in = static_cast<Eigen::Index>(sizes[l]);
    // Owned copies keep the product's rounding independent of heap alignment.
    const RowMatrix w = ConstMatrixMap(theta.data() + layers.weight_offset(l), out, in);
    Eigen::Map<const Eigen::RowVectorXd> b(theta.data() + layers.bias_offset(l), out);
    RowMatrix next = h * w.transpose();
    next.rowwise() += b;
    if (l + 1 < layers.layer_count()) next = next.cwiseMax(0.0);
    h = std::move(next);
  }
  const std::size_t classes = head.classes ? head.classes : layers.output_dim();
  return Tensor::from(h.middleCols(static_cast<Eigen::Index>(head.offset),
                                   static_cast<Eigen::Index>(classes)));
}

}  // namespace tdvcl
