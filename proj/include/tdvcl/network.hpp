#pragma once

#include "tdvcl/autodiff.hpp"
#include "tdvcl/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace tdvcl {

/// Fully connected ReLU network layout, e.g. {784, 100, 100, 10}.
///
/// Flat parameter order: for each layer, the weight matrix [out x in]
/// row-major, then the bias [out].
class LayerSpec {
 public:
  LayerSpec() = default;
  explicit LayerSpec(std::vector<std::size_t> sizes);

  const std::vector<std::size_t>& sizes() const noexcept { return sizes_; }
  std::size_t layer_count() const noexcept { return sizes_.empty() ? 0 : sizes_.size() - 1; }
  std::size_t input_dim() const { return sizes_.front(); }
  std::size_t output_dim() const { return sizes_.back(); }
  std::size_t parameter_count() const noexcept { return parameter_count_; }

  std::size_t weight_offset(std::size_t layer) const { return offsets_[layer]; }
  std::size_t bias_offset(std::size_t layer) const {
    return offsets_[layer] + sizes_[layer + 1] * sizes_[layer];
  }

  friend bool operator==(const LayerSpec& a, const LayerSpec& b) { return a.sizes_ == b.sizes_; }

 private:
  std::vector<std::size_t> sizes_;
  std::vector<std::size_t> offsets_;
  std::size_t parameter_count_ = 0;
};

/// Output columns that form one classifier head.
struct Head {
  std::size_t offset = 0;
  std::size_t classes = 0;
};

/// Logits [N x head.classes] for inputs [N x D] with parameters taken from a
/// flat vector on the tape.
Var forward(Var theta, const LayerSpec& layers, Var inputs, Head head);

/// Tape-free forward pass used for evaluation.
Tensor forward(std::span<const double> theta, const LayerSpec& layers, const Tensor& inputs,
               Head head);

}  // namespace tdvcl
