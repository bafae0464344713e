// SPDX-License-Identifier: Apache-2.0

#ifndef GRAPHER_NODE_TENSORS_HPP
#define GRAPHER_NODE_TENSORS_HPP

#include <cstddef>
#include <vector>

#include "grapher/tensor.hpp"

namespace grapher {

/// Node features F (d x N). Stored slot-major: row k of `matrix` is column k of F.
struct NodeFeatures {
  Tensor matrix;             // (N x d)
  std::vector<bool> active;  // false for <no_node> slots

  std::size_t slots() const { return matrix.rows(); }
  std::size_t width() const { return matrix.cols(); }
};

/// Node logits L (S x V x N). Step s is stored as an (N x V) tensor whose
/// row q holds the vocabulary scores of slot q, i.e. the transpose of L(s).
struct NodeLogits {
  std::vector<Tensor> steps;

  std::size_t length() const { return steps.size(); }
  std::size_t vocab() const { return steps.empty() ? 0 : steps.front().cols(); }
  std::size_t slots() const { return steps.empty() ? 0 : steps.front().rows(); }
  /// L(s)[v, n]
  double at(std::size_t s, std::size_t v, std::size_t n) const { return steps[s].at(n, v); }
};

}  // namespace grapher

#endif  // GRAPHER_NODE_TENSORS_HPP
