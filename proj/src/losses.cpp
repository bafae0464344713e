// SPDX-License-Identifier: Apache-2.0

#include "grapher/losses.hpp"

#include <stdexcept>
#include <string>

namespace grapher {

namespace {

void check_gamma(double gamma) {
  if (!(gamma >= 0.0)) throw std::invalid_argument("focal loss: gamma must be >= 0, got " + std::to_string(gamma));
}

// -(1 - exp(logp))^gamma * logp, elementwise over an (M x 1) column.
Tensor focal_from_logp(const Tensor& logp, double gamma) {
  const Tensor weight = pow(add_scalar(neg(exp(logp)), 1.0), gamma);
  return mul(weight, neg(logp));
}

// Sum over steps of the target log-probability weighted by 1/len inside the
// scored prefix of each row: the mean target log-probability per row.
Tensor mean_target_logp(const std::vector<Tensor>& steps, const std::vector<std::vector<int>>& targets,
                        int eos_id) {
  if (steps.empty()) throw std::invalid_argument("sequence loss: no steps");
  const std::size_t m = steps.front().rows();
  if (targets.size() != m) {
    throw std::invalid_argument("sequence loss: " + std::to_string(targets.size()) + " targets for " +
                                std::to_string(m) + " rows");
  }
  std::vector<std::size_t> len(m);
  std::size_t longest = 0;
  for (std::size_t r = 0; r < m; ++r) {
    len[r] = scored_length(targets[r], steps.size(), eos_id);
    longest = std::max(longest, len[r]);
  }
  Tensor acc;
  for (std::size_t s = 0; s < longest; ++s) {
    std::vector<int> ids(m);
    std::vector<double> w(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
      ids[r] = s < targets[r].size() ? targets[r][s] : eos_id;
      if (s < len[r]) w[r] = 1.0 / static_cast<double>(len[r]);
    }
    const Tensor term = mul(pick(log_softmax(steps[s]), ids), Tensor::constant({m, 1}, std::move(w)));
    acc = acc.defined() ? add(acc, term) : term;
  }
  return acc;
}

}  // namespace

std::size_t scored_length(std::span<const int> target, std::size_t length, int eos_id) {
  for (std::size_t s = 0; s < length; ++s) {
    const int id = s < target.size() ? target[s] : eos_id;
    if (id == eos_id) return s + 1;
  }
  return length;
}

Tensor cross_entropy(const Tensor& logits, int target) {
  if (logits.rows() != 1) throw std::invalid_argument("cross_entropy: expected a 1 x V row, got " + logits.shape().str());
  const int ids[1] = {target};
  return neg(pick(log_softmax(logits), ids));
}

Tensor focal_loss(const Tensor& logits, int target, double gamma) {
  if (logits.rows() != 1) throw std::invalid_argument("focal_loss: expected a 1 x V row, got " + logits.shape().str());
  const int ids[1] = {target};
  return focal_rows(logits, ids, gamma);
}

Tensor focal_rows(const Tensor& logits, std::span<const int> targets, double gamma) {
  check_gamma(gamma);
  return focal_from_logp(pick(log_softmax(logits), targets), gamma);
}

Tensor sequence_focal(const Tensor& logits, std::span<const int> target, double gamma, int eos_id) {
  std::vector<Tensor> steps;
  steps.reserve(logits.rows());
  for (std::size_t s = 0; s < logits.rows(); ++s) steps.push_back(slice_rows(logits, s, s + 1));
  return sequence_focal_rows(steps, {std::vector<int>(target.begin(), target.end())}, gamma, eos_id);
}

Tensor sequence_focal_rows(const std::vector<Tensor>& steps, const std::vector<std::vector<int>>& targets,
                           double gamma, int eos_id) {
  check_gamma(gamma);
  return focal_from_logp(mean_target_logp(steps, targets, eos_id), gamma);
}

Tensor sequence_cross_entropy_rows(const std::vector<Tensor>& steps, const std::vector<std::vector<int>>& targets,
                                   int eos_id) {
  return mean(neg(mean_target_logp(steps, targets, eos_id)));
}

Tensor edge_loss(const EdgePredictions& predictions, const EdgeTargets& targets, double gamma, int eos_id) {
  if (predictions.cells.empty()) return Tensor::scalar(0.0);
  if (predictions.class_logits.defined()) {
    return mean(focal_rows(predictions.class_logits, targets.classes, gamma));
  }
  return mean(sequence_focal_rows(predictions.step_logits, targets.sequences, gamma, eos_id));
}

LossBreakdown combine_losses(Tensor node_loss, Tensor edge_loss, const EdgeTargets& targets) {
  LossBreakdown out;
  out.total = add(node_loss, edge_loss);
  out.node_loss = std::move(node_loss);
  out.edge_loss = std::move(edge_loss);
  out.real_edge_terms = targets.real_edges;
  out.no_edge_terms = targets.no_edges;
  return out;
}

}  // namespace grapher
