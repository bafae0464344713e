// SPDX-License-Identifier: Apache-2.0
//
// Bipartite matching of decoded node slots to target nodes.

#ifndef GRAPHER_MATCHING_HPP
#define GRAPHER_MATCHING_HPP

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "grapher/node_tensors.hpp"

namespace grapher {

struct CostMatrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;  // row-major

  CostMatrix() = default;
  CostMatrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}
  CostMatrix(std::size_t r, std::size_t c, std::vector<double> v);

  double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }
  double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
};

/// P (N x N) with exactly one 1 per row and column, stored as row -> column.
struct PermutationMatrix {
  std::vector<std::size_t> col_of_row;

  static PermutationMatrix identity(std::size_t n);
  std::size_t size() const { return col_of_row.size(); }
  bool valid() const;
  /// row_of_col[c] = r where P(r, c) = 1.
  std::vector<std::size_t> row_of_col() const;
  PermutationMatrix inverse() const;
  std::vector<double> dense() const;
  double total(const CostMatrix& cost) const;

  bool operator==(const PermutationMatrix&) const = default;
};

/// Minimum-cost assignment (Kuhn-Munkres, O(N^3)). Among assignments within
/// 1e-9 * max(1, max|c|) of the optimum, the lexicographically smallest
/// row -> column mapping is returned. Throws std::invalid_argument for a
/// non-square or non-finite matrix.
PermutationMatrix hungarian(const CostMatrix& cost);

/// Exhaustive search with the same tie-break; N <= 8.
PermutationMatrix brute_force_match(const CostMatrix& cost);

/// cost(q, t): mean token cross-entropy of slot q's logits against target t
/// over the target's positions up to and including its first </s>. Targets
/// are padded with </s> to the logit length. Throws NumericalFault on NaN.
CostMatrix matching_cost(const NodeLogits& logits, std::span<const std::vector<int>> targets, int eos_id);

/// L'(s) = L(s) P and F' = F P: slot k of the result is the slot assigned to target k.
std::pair<NodeLogits, NodeFeatures> apply_permutation(const NodeLogits& logits, const NodeFeatures& features,
                                                      const PermutationMatrix& p);

}  // namespace grapher

#endif  // GRAPHER_MATCHING_HPP
