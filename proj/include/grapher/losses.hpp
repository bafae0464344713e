// SPDX-License-Identifier: Apache-2.0
//
// Token and class losses for the node and edge heads.

#ifndef GRAPHER_LOSSES_HPP
#define GRAPHER_LOSSES_HPP

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "grapher/tensor.hpp"

namespace grapher {

/// -log softmax(logits)[target] for a 1 x V row.
Tensor cross_entropy(const Tensor& logits, int target);

/// -(1 - p_t)^gamma log p_t. gamma = 0 reproduces cross_entropy bit for bit.
/// Throws std::invalid_argument for gamma < 0.
Tensor focal_loss(const Tensor& logits, int target, double gamma);

/// Row-wise focal loss: (M x C) logits, M targets -> (M x 1).
Tensor focal_rows(const Tensor& logits, std::span<const int> targets, double gamma);

/// Sequence focal loss for one (E x V) logit block. p_t is the geometric mean
/// of the target-token probabilities over positions up to and including the
/// first `eos_id`; the target is padded with eos to E.
Tensor sequence_focal(const Tensor& logits, std::span<const int> target, double gamma, int eos_id);

/// Batched sequence_focal: `steps[s]` holds the (M x V) logits of step s and
/// `targets[m]` the token sequence of row m. Returns (M x 1).
Tensor sequence_focal_rows(const std::vector<Tensor>& steps, const std::vector<std::vector<int>>& targets,
                           double gamma, int eos_id);

/// Mean over rows of the per-position token cross-entropy through eos, then
/// mean over rows. Used for node targets.
Tensor sequence_cross_entropy_rows(const std::vector<Tensor>& steps, const std::vector<std::vector<int>>& targets,
                                   int eos_id);

/// Positions of `target` that enter a sequence loss: up to and including the
/// first eos, capped at `length`.
std::size_t scored_length(std::span<const int> target, std::size_t length, int eos_id);

/// Edge-head output over the evaluated adjacency cells.
struct EdgePredictions {
  std::vector<std::pair<std::size_t, std::size_t>> cells;
  Tensor class_logits;             // classify: (M x C)
  std::vector<Tensor> step_logits; // generate: E tensors of (M x V)
};

/// Per-cell targets in the order of EdgePredictions::cells.
struct EdgeTargets {
  std::vector<int> classes;                 // classify
  std::vector<std::vector<int>> sequences;  // generate, each padded with eos to E
  std::size_t real_edges = 0;
  std::size_t no_edges = 0;
};

/// Mean over the evaluated cells of focal_rows (classify) or
/// sequence_focal_rows (generate). Zero when no cell is evaluated.
Tensor edge_loss(const EdgePredictions& predictions, const EdgeTargets& targets, double gamma, int eos_id);

struct LossBreakdown {
  Tensor node_loss;
  Tensor edge_loss;
  Tensor total;
  std::size_t real_edge_terms = 0;
  std::size_t no_edge_terms = 0;

  std::size_t edge_terms() const { return real_edge_terms + no_edge_terms; }
};

/// Unit-weight sum of the two terms.
LossBreakdown combine_losses(Tensor node_loss, Tensor edge_loss, const EdgeTargets& targets);

}  // namespace grapher

#endif  // GRAPHER_LOSSES_HPP
